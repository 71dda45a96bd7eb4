//
// Copyright 2026 The dpfed Authors
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
//

#ifndef DPFED_DPFED_HPP_
#define DPFED_DPFED_HPP_

#include "dpfed/config.hpp"
#include "dpfed/data.hpp"
#include "dpfed/dp.hpp"
#include "dpfed/errors.hpp"
#include "dpfed/federation.hpp"
#include "dpfed/model.hpp"
#include "dpfed/model_io.hpp"
#include "dpfed/rng.hpp"
#include "dpfed/schedule.hpp"
#include "dpfed/sweep.hpp"
#include "dpfed/telemetry.hpp"

#endif  // DPFED_DPFED_HPP_
