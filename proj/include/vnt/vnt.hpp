#pragma once

#include "vnt/augment.hpp"
#include "vnt/checkpoint.hpp"
#include "vnt/commands.hpp"
#include "vnt/config.hpp"
#include "vnt/data_io.hpp"
#include "vnt/errors.hpp"
#include "vnt/eval.hpp"
#include "vnt/geometry.hpp"
#include "vnt/layers.hpp"
#include "vnt/losses.hpp"
#include "vnt/model.hpp"
#include "vnt/ops.hpp"
#include "vnt/optim.hpp"
#include "vnt/proptest.hpp"
#include "vnt/rng.hpp"
#include "vnt/svd3.hpp"
#include "vnt/tensor.hpp"
#include "vnt/train.hpp"
