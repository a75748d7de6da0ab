#include "volterra/parallel.hpp"

namespace volterra {

namespace {
std::atomic<unsigned> g_default_threads{0};
}

void set_default_threads(unsigned n) { g_default_threads.store(n); }

unsigned default_threads() { return g_default_threads.load(); }

unsigned resolve_threads(unsigned requested) {
    unsigned n = requested != 0 ? requested : default_threads();
    if (n == 0) n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

} // namespace volterra
