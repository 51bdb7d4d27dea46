#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace fbsde {

// Path loops are split into fixed-size chunks. Chunk boundaries never depend
// on the worker count, and reductions combine per-chunk partials in chunk
// order, so results are bit-identical for any number of threads.
inline constexpr std::size_t kChunkSize = 4096;

// Worker count: explicit override, else FBSDE_THREADS, else hardware threads.
int worker_count();
// 0 restores the environment/default behaviour.
void set_worker_count(int n);

std::size_t chunk_count(std::size_t n);

using ChunkBody = std::function<void(std::size_t chunk, std::size_t begin, std::size_t end)>;
void parallel_chunks(std::size_t n, const ChunkBody& body);

// Ordered sum of per-chunk partial sums.
double chunked_sum(std::size_t n, const std::function<double(std::size_t, std::size_t)>& f);

// Per-chunk partial vectors of fixed width, summed in chunk order.
std::vector<double> chunked_vector_sum(
    std::size_t n, std::size_t width,
    const std::function<void(std::size_t, std::size_t, double*)>& f);

struct MeanStat {
  double mean = 0.0;
  double variance = 0.0;  // unbiased sample variance
  double se = 0.0;        // standard error of the mean
  std::size_t count = 0;
};

MeanStat mean_stat(const double* x, std::size_t n);
inline MeanStat mean_stat(const std::vector<double>& x) { return mean_stat(x.data(), x.size()); }

}  // namespace fbsde
