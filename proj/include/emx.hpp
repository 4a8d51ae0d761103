/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "emx/config.hpp"
#include "emx/corpus.hpp"
#include "emx/dsp.hpp"
#include "emx/error.hpp"
#include "emx/io.hpp"
#include "emx/nn/checkpoint.hpp"
#include "emx/nn/layers.hpp"
#include "emx/nn/model.hpp"
#include "emx/nn/tensor.hpp"
#include "emx/nn/train.hpp"
#include "emx/parallel.hpp"
#include "emx/pipeline.hpp"
#include "emx/rng.hpp"
#include "emx/segmenter.hpp"
#include "emx/simulator.hpp"
#include "emx/svg.hpp"
#include "emx/trace.hpp"
