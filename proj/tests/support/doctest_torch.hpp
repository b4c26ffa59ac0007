#pragma once
// libtorch's logging header defines a glog-style CHECK; load it first so doctest's wins.

#include <torch/torch.h>

#undef CHECK
#include <doctest.h>
