#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "somno/error.hpp"
#include "somno/parallel.hpp"

namespace somno {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ChannelMissing: return "ChannelMissing";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::InvalidLength: return "InvalidLength";
    case ErrorKind::InvalidBand: return "InvalidBand";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::LabelError: return "LabelError";
    case ErrorKind::StateError: return "StateError";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::InvalidFeature: return "InvalidFeature";
    case ErrorKind::StratificationError: return "StratificationError";
    case ErrorKind::LayerError: return "LayerError";
    case ErrorKind::Underdetermined: return "Underdetermined";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvariantBreach: return "InvariantBreach";
  }
  return "Error";
}

std::size_t thread_count() {
  if (const char* env = std::getenv("SOMNOSCOPE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace {
thread_local bool in_worker = false;
}  // namespace

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = in_worker ? 1 : std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      in_worker = true;
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace somno
