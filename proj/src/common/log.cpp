#include "lrrec/common/log.hpp"

#include <iostream>
#include <mutex>

namespace lrrec::log {
namespace {

std::mutex g_mutex;
Sink g_sink;
bool g_verbose = false;

}  // namespace

void warn(const std::string& msg) {
  std::lock_guard lock(g_mutex);
  if (g_sink)
    g_sink(msg);
  else
    std::cerr << "warning: " << msg << '\n';
}

void info(const std::string& msg) {
  std::lock_guard lock(g_mutex);
  if (g_verbose) std::cerr << msg << '\n';
}

Sink set_warning_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  auto prev = std::move(g_sink);
  g_sink = std::move(sink);
  return prev;
}

void set_verbose(bool on) {
  std::lock_guard lock(g_mutex);
  g_verbose = on;
}

}  // namespace lrrec::log
