// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace trajlab::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

/// Parses argv and runs one subcommand. Failures print `ERROR <stage> <message>`
/// to `err` and return the matching exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace trajlab::cli
