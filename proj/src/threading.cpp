#include "sacvit/threading.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace sacvit {

int worker_count() {
    int cap = 0;
    if (const char* env = std::getenv("SACVIT_THREADS")) {
        cap = std::atoi(env);
        if (cap < 0) cap = 0;
    }
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    const int autodetect = hw > 0 ? hw : 1;
    return cap == 0 ? autodetect : cap;
}

void parallel_for(int count, const std::function<void(int)>& fn) {
    const int workers = std::min(worker_count(), count);
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace sacvit
