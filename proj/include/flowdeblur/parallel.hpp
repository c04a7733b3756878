#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace flowdeblur::parallel {

// Row-range parallel loop. fn(row_begin, row_end) must only write rows it owns.
template <typename Fn>
void for_rows(int rows, int threads, Fn&& fn) {
  if (rows <= 0) return;
  const int workers = std::clamp(threads, 1, rows);
  if (workers == 1) {
    fn(0, rows);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  const int chunk = (rows + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    const int b = w * chunk;
    const int e = std::min(rows, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min(rows, chunk));
  for (auto& t : pool) t.join();
}

// Sum of per-row partial values. Partials are combined in row order, so the
// result does not depend on the thread count.
template <typename RowFn>
double sum_rows(int rows, int threads, RowFn&& row_value) {
  std::vector<double> partial(static_cast<std::size_t>(std::max(rows, 0)), 0.0);
  for_rows(rows, threads, [&](int b, int e) {
    for (int y = b; y < e; ++y) partial[static_cast<std::size_t>(y)] = row_value(y);
  });
  double total = 0.0;
  for (double v : partial) total += v;
  return total;
}

// Number of fixed row blocks used by scatter operations. Each block scatters
// into its own buffer and buffers are reduced in block order, independent of
// how many threads executed them.
inline constexpr int kScatterBlocks = 8;

template <typename BlockFn>
void for_blocks(int rows, int threads, BlockFn&& fn) {
  const int blocks = std::min(kScatterBlocks, std::max(rows, 1));
  const int span = (rows + blocks - 1) / blocks;
  for_rows(blocks, threads, [&](int b, int e) {
    for (int k = b; k < e; ++k) {
      const int y0 = k * span;
      const int y1 = std::min(rows, y0 + span);
      fn(k, y0, y1);
    }
  });
}

}  // namespace flowdeblur::parallel
