#pragma once

#include "actlab/analysis.hpp"
#include "actlab/attacks.hpp"
#include "actlab/checkpoint.hpp"
#include "actlab/config.hpp"
#include "actlab/data.hpp"
#include "actlab/gradcheck.hpp"
#include "actlab/ioutil.hpp"
#include "actlab/metrics.hpp"
#include "actlab/models.hpp"
#include "actlab/objectives.hpp"
#include "actlab/rng.hpp"
#include "actlab/tape.hpp"
#include "actlab/tensor.hpp"
#include "actlab/trainer.hpp"
