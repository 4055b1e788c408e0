#include "istr/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>

namespace istr {

static int resolve_thread_count() {
  if (const char* env = std::getenv("ISTR_THREADS")) {
    try {
      int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (...) {
      // fall through to the default on unparsable values
    }
  }
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  return static_cast<int>(std::min(hw, 8u));
}

int thread_count() {
  static const int n = resolve_thread_count();
  return n;
}

}  // namespace istr
