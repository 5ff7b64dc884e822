#pragma once

#include "ndarr.hpp"
#include "rng.hpp"
#include "nn_layers.hpp"
#include "reorder.hpp"
#include "attn_global_independent.hpp"
#include "attn_global_dependent.hpp"
#include "oracle.hpp"
#include "binary_io.hpp"
#include "synth_data.hpp"
#include "ganet_model.hpp"
#include "gradcheck.hpp"
#include "run_config.hpp"
