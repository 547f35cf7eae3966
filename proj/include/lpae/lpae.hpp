#pragma once

#include "lpae/arch.hpp"
#include "lpae/autograd.hpp"
#include "lpae/checkpoint.hpp"
#include "lpae/common.hpp"
#include "lpae/data.hpp"
#include "lpae/features.hpp"
#include "lpae/gemm.hpp"
#include "lpae/gradcheck.hpp"
#include "lpae/image_io.hpp"
#include "lpae/manifest.hpp"
#include "lpae/model.hpp"
#include "lpae/ops.hpp"
#include "lpae/pyramid.hpp"
#include "lpae/rng.hpp"
#include "lpae/tensor.hpp"
#include "lpae/train.hpp"
#include "lpae/zca.hpp"
