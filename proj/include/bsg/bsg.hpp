#pragma once

#include "bsg/error.hpp"
#include "bsg/rng.hpp"
#include "bsg/types.hpp"
#include "bsg/hmm.hpp"
#include "bsg/hmm_io.hpp"
#include "bsg/processes.hpp"
#include "bsg/msp.hpp"
#include "bsg/msp_io.hpp"
#include "bsg/transformer/config.hpp"
#include "bsg/transformer/params.hpp"
#include "bsg/transformer/model.hpp"
#include "bsg/transformer/train.hpp"
#include "bsg/transformer/checkpoint.hpp"
#include "bsg/transformer/capture.hpp"
#include "bsg/probe.hpp"
#include "bsg/probe_io.hpp"
#include "bsg/stats.hpp"
#include "bsg/geometry.hpp"
#include "bsg/svg.hpp"
#include "bsg/pipeline.hpp"
