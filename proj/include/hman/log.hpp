// Copyright 2026 The HMAN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

// Line-oriented key=value logging. Every record starts with level=...
namespace hman::log {

using Sink = std::function<void(const std::string&)>;

inline Sink& sink() {
  static Sink s = [](const std::string& line) { std::cerr << line << '\n'; };
  return s;
}

inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

// Replaces the sink; returns the previous one.
inline Sink set_sink(Sink s) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  Sink old = std::move(sink());
  sink() = std::move(s);
  return old;
}

inline std::atomic<bool>& info_enabled() {
  static std::atomic<bool> on{true};
  return on;
}

inline void emit(const std::string& line) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  if (sink()) sink()(line);
}

// Builds "level=<level> k1=v1 k2=v2 ..." from alternating keys and values.
template <typename... Args>
std::string record(const char* level, Args&&... kv) {
  std::ostringstream oss;
  oss.precision(9);
  oss << "level=" << level;
  bool key = true;
  ((oss << (key ? " " : "=") << kv, key = !key), ...);
  return oss.str();
}

template <typename... Args>
void warn(Args&&... kv) {
  emit(record("warn", std::forward<Args>(kv)...));
}

template <typename... Args>
void info(Args&&... kv) {
  if (info_enabled()) emit(record("info", std::forward<Args>(kv)...));
}

}  // namespace hman::log
