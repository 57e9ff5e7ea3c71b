// Copyright 2026 The PLPCL Authors.
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

#include "plpcl/data.hpp"
#include "plpcl/error.hpp"
#include "plpcl/eval.hpp"
#include "plpcl/losses.hpp"
#include "plpcl/matrix.hpp"
#include "plpcl/model.hpp"
#include "plpcl/pipeline.hpp"
#include "plpcl/prototypes.hpp"
#include "plpcl/pseudo_labels.hpp"
#include "plpcl/tape.hpp"
