// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string_view>

namespace crossmo::log {

/// Non-fatal diagnostics. Defaults to stderr; the CLI redirects them into the
/// run log and tests can capture them.
void warn(std::string_view message);

using Sink = std::function<void(std::string_view)>;
/// Installs a sink and returns the previous one.
Sink set_warning_sink(Sink sink);

}  // namespace crossmo::log
