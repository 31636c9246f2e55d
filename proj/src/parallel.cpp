#include "lift/parallel.hpp"

#include <atomic>

namespace lift {
namespace {

int default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

std::atomic<int> g_threads{default_threads()};

}  // namespace

void set_num_threads(int n) { g_threads.store(n > 0 ? n : default_threads()); }

int num_threads() { return g_threads.load(); }

}  // namespace lift
