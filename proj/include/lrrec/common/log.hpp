#pragma once

#include <functional>
#include <string>

namespace lrrec::log {

using Sink = std::function<void(const std::string&)>;

void warn(const std::string& msg);
void info(const std::string& msg);

// Replaces the warning sink (default: stderr). Returns the previous sink.
Sink set_warning_sink(Sink sink);
// When false, info() is silent. Default false.
void set_verbose(bool on);

}  // namespace lrrec::log
