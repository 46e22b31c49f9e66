// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cvarprobe {

/// Entry point of the `cvarprobe` tool. `args` excludes the program name.
/// Returns 0 on success, 1 on runtime errors and 2 on usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cvarprobe
