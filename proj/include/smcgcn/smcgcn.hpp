#pragma once

#include "smcgcn/autodiff.hpp"
#include "smcgcn/classifier_head.hpp"
#include "smcgcn/config.hpp"
#include "smcgcn/csv.hpp"
#include "smcgcn/error.hpp"
#include "smcgcn/experiment.hpp"
#include "smcgcn/gcn_backbone.hpp"
#include "smcgcn/parameters.hpp"
#include "smcgcn/pipeline.hpp"
#include "smcgcn/report.hpp"
#include "smcgcn/signal_ingest.hpp"
#include "smcgcn/smc_engine.hpp"
#include "smcgcn/types.hpp"
