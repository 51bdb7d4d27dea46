#include "fbsde/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace fbsde {

namespace {
std::atomic<int> g_override{0};

int env_workers() {
  if (const char* s = std::getenv("FBSDE_THREADS")) {
    int v = std::atoi(s);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}
}  // namespace

int worker_count() {
  int o = g_override.load();
  return o > 0 ? o : env_workers();
}

void set_worker_count(int n) { g_override.store(n > 0 ? n : 0); }

std::size_t chunk_count(std::size_t n) { return (n + kChunkSize - 1) / kChunkSize; }

void parallel_chunks(std::size_t n, const ChunkBody& body) {
  const std::size_t chunks = chunk_count(n);
  if (chunks == 0) return;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), chunks);
  auto run_chunk = [&](std::size_t c) {
    const std::size_t b = c * kChunkSize;
    body(c, b, std::min(n, b + kChunkSize));
  };
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (;;) {
      std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        run_chunk(c);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(chunks);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

double chunked_sum(std::size_t n, const std::function<double(std::size_t, std::size_t)>& f) {
  std::vector<double> partial(chunk_count(n), 0.0);
  parallel_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) { partial[c] = f(b, e); });
  double s = 0.0;
  for (double v : partial) s += v;
  return s;
}

std::vector<double> chunked_vector_sum(
    std::size_t n, std::size_t width,
    const std::function<void(std::size_t, std::size_t, double*)>& f) {
  const std::size_t chunks = chunk_count(n);
  std::vector<double> partial(chunks * width, 0.0);
  parallel_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) { f(b, e, partial.data() + c * width); });
  std::vector<double> out(width, 0.0);
  for (std::size_t c = 0; c < chunks; ++c)
    for (std::size_t k = 0; k < width; ++k) out[k] += partial[c * width + k];
  return out;
}

MeanStat mean_stat(const double* x, std::size_t n) {
  MeanStat s;
  s.count = n;
  if (n == 0) return s;
  s.mean = chunked_sum(n, [&](std::size_t b, std::size_t e) {
             double acc = 0.0;
             for (std::size_t p = b; p < e; ++p) acc += x[p];
             return acc;
           }) / static_cast<double>(n);
  if (n < 2) return s;
  const double m = s.mean;
  double ss = chunked_sum(n, [&](std::size_t b, std::size_t e) {
    double acc = 0.0;
    for (std::size_t p = b; p < e; ++p) acc += (x[p] - m) * (x[p] - m);
    return acc;
  });
  s.variance = ss / static_cast<double>(n - 1);
  s.se = std::sqrt(s.variance / static_cast<double>(n));
  return s;
}

}  // namespace fbsde
