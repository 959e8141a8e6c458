#pragma once

// Umbrella header.

#include "hiclass/ablation.hpp"
#include "hiclass/data.hpp"
#include "hiclass/datagen.hpp"
#include "hiclass/evaluation.hpp"
#include "hiclass/gradcheck.hpp"
#include "hiclass/io.hpp"
#include "hiclass/losses.hpp"
#include "hiclass/model.hpp"
#include "hiclass/numerics.hpp"
#include "hiclass/rng.hpp"
#include "hiclass/run_config.hpp"
#include "hiclass/taxonomy.hpp"
#include "hiclass/trainer.hpp"
