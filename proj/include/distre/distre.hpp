// Copyright 2026 The DistRE Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "distre/autodiff.hpp"
#include "distre/bpe.hpp"
#include "distre/checkpoint.hpp"
#include "distre/data.hpp"
#include "distre/error.hpp"
#include "distre/eval.hpp"
#include "distre/mil.hpp"
#include "distre/model.hpp"
#include "distre/random.hpp"
#include "distre/synthetic.hpp"
#include "distre/tensor.hpp"
#include "distre/trainer.hpp"
#include "distre/run_config.hpp"
