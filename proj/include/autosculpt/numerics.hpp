#pragma once

#include "autosculpt/numerics/autodiff.hpp"
#include "autosculpt/numerics/kernels.hpp"
#include "autosculpt/numerics/optim.hpp"
#include "autosculpt/numerics/rng.hpp"
#include "autosculpt/numerics/tensor.hpp"
