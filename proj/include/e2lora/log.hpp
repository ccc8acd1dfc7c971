#pragma once

#include <functional>
#include <string>

namespace e2lora {

using WarningSink = std::function<void(const std::string&)>;

/// Replaces the process-wide warning sink (stderr by default). Pass an empty
/// function to restore the default. Not thread-safe; set it before starting runs.
void set_warning_sink(WarningSink sink);

void warn(const std::string& message);

}  // namespace e2lora
