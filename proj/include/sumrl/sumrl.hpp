#pragma once

#include "sumrl/corpus.hpp"
#include "sumrl/decode.hpp"
#include "sumrl/eval.hpp"
#include "sumrl/model.hpp"
#include "sumrl/rng.hpp"
#include "sumrl/rouge.hpp"
#include "sumrl/tensor.hpp"
#include "sumrl/train.hpp"
#include "sumrl/vocab.hpp"
