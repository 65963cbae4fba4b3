#pragma once

#include "config.hpp"
#include "error.hpp"
#include "half.hpp"
#include "metrics.hpp"
#include "packed_codec.hpp"
#include "quantizer.hpp"
#include "synth.hpp"
#include "tensor.hpp"
#include "tensor_store.hpp"
