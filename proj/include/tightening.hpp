/*
 Copyright 2026 The tightening Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include "tightening/dynamics.hpp"
#include "tightening/errors.hpp"
#include "tightening/expr.hpp"
#include "tightening/geometry.hpp"
#include "tightening/hypotheses.hpp"
#include "tightening/io.hpp"
#include "tightening/propagation.hpp"
#include "tightening/repair.hpp"
#include "tightening/scenario.hpp"
#include "tightening/signals.hpp"
#include "tightening/svg.hpp"
