#pragma once

#include <trn/checkpoint.hpp>
#include <trn/dataio.hpp>
#include <trn/eval.hpp>
#include <trn/labels.hpp>
#include <trn/model.hpp>
#include <trn/numeric.hpp>
#include <trn/skeleton.hpp>
#include <trn/streaming.hpp>
#include <trn/training.hpp>
