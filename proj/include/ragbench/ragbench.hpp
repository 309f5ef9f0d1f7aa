// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ragbench/common.hpp"
#include "ragbench/corpus.hpp"
#include "ragbench/encoder.hpp"
#include "ragbench/retriever.hpp"
#include "ragbench/contrastive.hpp"
#include "ragbench/dpo.hpp"
#include "ragbench/eval.hpp"
#include "ragbench/llm.hpp"
#include "ragbench/synthqgen.hpp"
#include "ragbench/pipeline.hpp"
#include "ragbench/annotation.hpp"
#include "ragbench/server.hpp"
