/*
 * Copyright 2026 The GRASP Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line front end: synth, build-db, train, eval, sweep and report.

#ifndef GRASP_CLI_H_
#define GRASP_CLI_H_

#include <string>
#include <vector>

namespace grasp::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

// argv[0] is the program name.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace grasp::cli

#endif  // GRASP_CLI_H_
