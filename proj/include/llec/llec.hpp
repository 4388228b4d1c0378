#pragma once

#include "llec/container.hpp"
#include "llec/entropy_coder.hpp"
#include "llec/errors.hpp"
#include "llec/event_io.hpp"
#include "llec/hyperprior.hpp"
#include "llec/metrics.hpp"
#include "llec/octree.hpp"
#include "llec/preprocess.hpp"
#include "llec/synthetic.hpp"
#include "llec/trainer.hpp"
