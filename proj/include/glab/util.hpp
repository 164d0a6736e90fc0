#pragma once

#include <cstddef>
#include <exception>
#include <filesystem>
#include <string>
#include <string_view>

namespace glab {

// Hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

// First 16 hex chars of the SHA-256; used for config hashes and checkpoint ids.
std::string short_hash(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

// Keeps large per-batch buffers on the heap instead of fresh mmap/munmap pairs
// (glibc only; a no-op elsewhere). Call once at startup.
void tune_allocator();

// Carries an exception out of an OpenMP loop. The error from the lowest
// iteration index wins, so the report does not depend on scheduling.
class LoopErrors {
 public:
  template <class F>
  void run(std::ptrdiff_t index, F&& body) noexcept {
    try {
      body();
    } catch (...) {
#pragma omp critical(glab_loop_errors)
      if (!error_ || index < index_) {
        error_ = std::current_exception();
        index_ = index;
      }
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::exception_ptr error_;
  std::ptrdiff_t index_ = 0;
};

}  // namespace glab
