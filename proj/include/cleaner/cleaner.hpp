// Copyright 2026 The cleanerbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "cleaner/ablation.hpp"
#include "cleaner/attacks.hpp"
#include "cleaner/captions.hpp"
#include "cleaner/commands.hpp"
#include "cleaner/corpus.hpp"
#include "cleaner/error.hpp"
#include "cleaner/evaluation.hpp"
#include "cleaner/experiment.hpp"
#include "cleaner/io.hpp"
#include "cleaner/lexicon.hpp"
#include "cleaner/losses.hpp"
#include "cleaner/model.hpp"
#include "cleaner/optim.hpp"
#include "cleaner/random.hpp"
#include "cleaner/training.hpp"
