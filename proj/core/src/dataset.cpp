#include "lightnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lightnn {

namespace {

uint32_t read_be32(std::ifstream& f, const std::string& path, int64_t offset) {
  unsigned char buf[4];
  if (!f.read(reinterpret_cast<char*>(buf), 4))
    throw std::runtime_error(path + ": truncated at offset " +
                             std::to_string(offset));
  return (static_cast<uint32_t>(buf[0]) << 24) |
         (static_cast<uint32_t>(buf[1]) << 16) |
         (static_cast<uint32_t>(buf[2]) << 8) | static_cast<uint32_t>(buf[3]);
}

}  // namespace

DatasetHandle load_idx(const std::string& images_path,
                       const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error(images_path + ": cannot open");
  const uint32_t img_magic = read_be32(img, images_path, 0);
  if (img_magic != 0x00000803)
    throw std::runtime_error(images_path + ": bad magic at offset 0 (got 0x" +
                             [&] {
                               char b[16];
                               std::snprintf(b, sizeof b, "%08x", img_magic);
                               return std::string(b);
                             }() +
                             ", want 0x00000803)");
  const uint32_t n = read_be32(img, images_path, 4);
  const uint32_t h = read_be32(img, images_path, 8);
  const uint32_t w = read_be32(img, images_path, 12);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error(labels_path + ": cannot open");
  const uint32_t lab_magic = read_be32(lab, labels_path, 0);
  if (lab_magic != 0x00000801)
    throw std::runtime_error(labels_path + ": bad magic at offset 0 (got 0x" +
                             [&] {
                               char b[16];
                               std::snprintf(b, sizeof b, "%08x", lab_magic);
                               return std::string(b);
                             }() +
                             ", want 0x00000801)");
  const uint32_t lab_n = read_be32(lab, labels_path, 4);
  if (lab_n != n)
    throw std::runtime_error(labels_path + ": item count " +
                             std::to_string(lab_n) + " does not match " +
                             std::to_string(n) + " images");

  DatasetHandle d;
  d.inputs = Tensor({static_cast<int>(n), static_cast<int>(h), static_cast<int>(w)});
  const int64_t pixel_count = d.inputs.numel();
  std::vector<unsigned char> raw(static_cast<size_t>(pixel_count));
  if (!img.read(reinterpret_cast<char*>(raw.data()), pixel_count))
    throw std::runtime_error(images_path + ": truncated pixel data at offset 16");
  for (int64_t i = 0; i < pixel_count; ++i)
    d.inputs.data[static_cast<size_t>(i)] = raw[static_cast<size_t>(i)] / 255.f;

  std::vector<unsigned char> raw_labels(n);
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), n))
    throw std::runtime_error(labels_path + ": truncated label data at offset 8");
  d.labels.resize(n);
  int max_label = 0;
  for (uint32_t i = 0; i < n; ++i) {
    d.labels[i] = raw_labels[i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = max_label + 1;
  d.train_begin = 0;
  d.train_end = n;
  return d;
}

DatasetHandle load_csv(const std::string& path, int label_column,
                       bool has_header) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path + ": cannot open");

  std::vector<std::vector<std::string>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (has_header && rows.empty() && line_no == 1) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      if (field.size() >= 2 && field.front() == '"' && field.back() == '"')
        field = field.substr(1, field.size() - 2);
      fields.push_back(field);
    }
    if (line.back() == ',') fields.emplace_back();
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");

  const size_t width = rows.front().size();
  if (width < 2)
    throw std::runtime_error(path + ": need at least one feature and a label column");
  int label_idx = label_column < 0 ? static_cast<int>(width) + label_column
                                   : label_column;
  if (label_idx < 0 || label_idx >= static_cast<int>(width))
    throw std::runtime_error(path + ": label column " +
                             std::to_string(label_column) + " out of range");

  const int features = static_cast<int>(width) - 1;
  const int64_t n = static_cast<int64_t>(rows.size());
  DatasetHandle d;
  d.inputs = Tensor({static_cast<int>(n), features});
  d.labels.resize(static_cast<size_t>(n));

  std::vector<std::string> class_names;
  for (int64_t r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<size_t>(r)];
    if (row.size() != width)
      throw std::runtime_error(path + ": row " + std::to_string(r + 1) +
                               " has " + std::to_string(row.size()) +
                               " fields, expected " + std::to_string(width));
    int fi = 0;
    for (int c = 0; c < static_cast<int>(width); ++c) {
      if (c == label_idx) {
        auto it = std::find(class_names.begin(), class_names.end(), row[c]);
        if (it == class_names.end()) {
          class_names.push_back(row[c]);
          it = class_names.end() - 1;
        }
        d.labels[static_cast<size_t>(r)] =
            static_cast<int>(it - class_names.begin());
        continue;
      }
      try {
        size_t pos = 0;
        const float v = std::stof(row[c], &pos);
        if (pos != row[c].size()) throw std::invalid_argument("trailing junk");
        d.inputs.at2(static_cast<int>(r), fi) = v;
      } catch (const std::exception&) {
        throw std::runtime_error(path + ": non-numeric cell at row " +
                                 std::to_string(r + 1) + ", column " +
                                 std::to_string(c + 1) + ": \"" + row[c] + "\"");
      }
      ++fi;
    }
  }
  d.num_classes = static_cast<int>(class_names.size());

  // z-score per feature column, sigma floored to avoid blowing up constants
  for (int c = 0; c < features; ++c) {
    double sum = 0.0;
    for (int64_t r = 0; r < n; ++r) sum += d.inputs.at2(static_cast<int>(r), c);
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (int64_t r = 0; r < n; ++r) {
      const double diff = d.inputs.at2(static_cast<int>(r), c) - mean;
      sq += diff * diff;
    }
    const double sigma = std::sqrt(sq / static_cast<double>(n));
    const float inv = 1.f / static_cast<float>(std::max(sigma, 1e-8));
    for (int64_t r = 0; r < n; ++r) {
      float& v = d.inputs.at2(static_cast<int>(r), c);
      v = (v - static_cast<float>(mean)) * inv;
    }
  }

  d.train_begin = 0;
  d.train_end = n;
  return d;
}

DatasetHandle merge_train_test(const DatasetHandle& train,
                               const DatasetHandle& test,
                               float validation_fraction) {
  if (validation_fraction <= 0.f || validation_fraction >= 1.f)
    throw std::invalid_argument("validation fraction must lie in (0, 1)");
  if (train.item_numel() != test.item_numel())
    throw std::invalid_argument("train and test item shapes differ");

  DatasetHandle d;
  std::vector<int> shape = train.inputs.shape;
  shape[0] = static_cast<int>(train.count() + test.count());
  d.inputs = Tensor(shape);
  std::copy(train.inputs.data.begin(), train.inputs.data.end(),
            d.inputs.data.begin());
  std::copy(test.inputs.data.begin(), test.inputs.data.end(),
            d.inputs.data.begin() + train.inputs.numel());
  d.labels = train.labels;
  d.labels.insert(d.labels.end(), test.labels.begin(), test.labels.end());
  d.num_classes = std::max(train.num_classes, test.num_classes);

  const int64_t n_train = train.count();
  const int64_t n_val = std::llround(static_cast<double>(n_train) * validation_fraction);
  if (n_val < 1 || n_val >= n_train)
    throw std::invalid_argument("validation fraction leaves an empty split");
  d.train_begin = 0;
  d.train_end = n_train - n_val;
  d.val_begin = n_train - n_val;
  d.val_end = n_train;
  d.test_begin = n_train;
  d.test_end = n_train + test.count();
  return d;
}

void split_tail(DatasetHandle& data, float val_fraction, float test_fraction) {
  const int64_t n = data.count();
  const int64_t n_test = std::llround(static_cast<double>(n) * test_fraction);
  const int64_t n_val = std::llround(static_cast<double>(n) * val_fraction);
  if (n_val < 1 || n_test < 1 || n_val + n_test >= n)
    throw std::invalid_argument("split fractions leave an empty split");
  data.train_begin = 0;
  data.train_end = n - n_val - n_test;
  data.val_begin = data.train_end;
  data.val_end = n - n_test;
  data.test_begin = data.val_end;
  data.test_end = n;
}

Tensor make_batch(const DatasetHandle& data, const int64_t* indices, int count,
                  const std::vector<int>& item_shape) {
  const int64_t item = data.item_numel();
  if (shape_numel(item_shape) != item)
    throw std::invalid_argument("make_batch: item shape does not match dataset items");
  std::vector<int> shape = item_shape;
  shape.insert(shape.begin(), count);
  Tensor batch(shape);
  for (int i = 0; i < count; ++i) {
    const int64_t src = indices[i];
    std::copy(data.inputs.data.begin() + src * item,
              data.inputs.data.begin() + (src + 1) * item,
              batch.data.begin() + static_cast<int64_t>(i) * item);
  }
  return batch;
}

std::vector<int> gather_labels(const DatasetHandle& data,
                               const int64_t* indices, int count) {
  std::vector<int> labels(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(indices[i])];
  return labels;
}

}  // namespace lightnn
