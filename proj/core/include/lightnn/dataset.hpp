#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lightnn/tensor.hpp"

namespace lightnn {

// Samples plus labels plus three half-open index ranges into them. Loaders
// return everything in the train range; merge_train_test and split_tail carve
// out validation and test ranges.
struct DatasetHandle {
  Tensor inputs;  // [N, ...item dims]
  std::vector<int> labels;
  int num_classes = 0;
  int64_t train_begin = 0, train_end = 0;
  int64_t val_begin = 0, val_end = 0;
  int64_t test_begin = 0, test_end = 0;

  int64_t count() const { return static_cast<int64_t>(labels.size()); }
  int64_t item_numel() const {
    return count() > 0 ? inputs.numel() / count() : 0;
  }
};

// Standard IDX pair (big-endian magic 0x00000803 images / 0x00000801 labels).
// Pixels are scaled by 1/255.
DatasetHandle load_idx(const std::string& images_path,
                       const std::string& labels_path);

// Rectangular numeric CSV. Features are z-scored per column (sigma floored at
// 1e-8); labels map to 0..C-1 in first-appearance order. label_column may be
// negative to count from the end (-1 = last).
DatasetHandle load_csv(const std::string& path, int label_column,
                       bool has_header);

// Concatenates the two sets and marks the last validation_fraction of the
// training rows as the validation range.
DatasetHandle merge_train_test(const DatasetHandle& train,
                               const DatasetHandle& test,
                               float validation_fraction);

// Carves validation and test tails out of a single loaded set, in that order
// from the end.
void split_tail(DatasetHandle& data, float val_fraction, float test_fraction);

// Gathers rows by index into a batch shaped [count, ...item_shape].
Tensor make_batch(const DatasetHandle& data, const int64_t* indices, int count,
                  const std::vector<int>& item_shape);

std::vector<int> gather_labels(const DatasetHandle& data,
                               const int64_t* indices, int count);

}  // namespace lightnn
