#include "cbflab/parallel.hpp"

#include <stdexcept>

namespace cbflab {

namespace {
std::atomic<int> g_threads{1};
}

int thread_count() { return g_threads.load(); }

void set_thread_count(int threads) {
    if (threads < 1) throw std::invalid_argument("thread count must be at least 1");
    g_threads.store(threads);
}

}  // namespace cbflab
