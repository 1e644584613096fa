// Copyright 2026 The HMAN Authors.
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

#include "hman/binary_io.hpp"
#include "hman/config.hpp"
#include "hman/corpus.hpp"
#include "hman/errors.hpp"
#include "hman/geometry.hpp"
#include "hman/gradcheck.hpp"
#include "hman/log.hpp"
#include "hman/model.hpp"
#include "hman/objective.hpp"
#include "hman/ops.hpp"
#include "hman/random.hpp"
#include "hman/retrieval.hpp"
#include "hman/tape.hpp"
#include "hman/tensor.hpp"
#include "hman/training.hpp"
#include "hman/verify.hpp"
