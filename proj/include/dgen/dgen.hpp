#pragma once

#include "dgen/checkpoint.hpp"
#include "dgen/data_prep.hpp"
#include "dgen/decoding.hpp"
#include "dgen/dictionary_encoder.hpp"
#include "dgen/error.hpp"
#include "dgen/evaluation.hpp"
#include "dgen/manifest.hpp"
#include "dgen/model.hpp"
#include "dgen/pipeline.hpp"
#include "dgen/ppdb.hpp"
#include "dgen/retrieval.hpp"
#include "dgen/tensor.hpp"
#include "dgen/text.hpp"
#include "dgen/trace.hpp"
#include "dgen/training.hpp"
#include "dgen/vocabulary.hpp"
