// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace zoomrefine {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitDataset = 4;
inline constexpr int kExitBackend = 5;
/// eval stopped by SIGINT/SIGTERM after draining in-flight records.
inline constexpr int kExitInterrupted = 130;

/// Entry point of the `zoomrefine` tool. Never throws.
int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace zoomrefine
