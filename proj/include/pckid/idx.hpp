#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pckid/errors.hpp"
#include "pckid/incomplete_matrix.hpp"
#include "pckid/rng.hpp"

namespace pckid {

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw FormatError("IDX file truncated: " + path);
    return (static_cast<std::uint32_t>(bytes[0]) << 24) | (static_cast<std::uint32_t>(bytes[1]) << 16) |
           (static_cast<std::uint32_t>(bytes[2]) << 8) | static_cast<std::uint32_t>(bytes[3]);
}

}  // namespace detail

/// IDX3 images (magic 0x00000803), as N x (rows*cols) doubles scaled to [0, 1].
inline Eigen::MatrixXd load_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open IDX image file: " + path);
    const auto magic = detail::read_be_u32(in, path);
    if (magic != 0x00000803u) {
        throw FormatError("bad IDX image magic in " + path + " (expected 0x00000803)");
    }
    const auto count = detail::read_be_u32(in, path);
    const auto rows = detail::read_be_u32(in, path);
    const auto cols = detail::read_be_u32(in, path);
    const std::size_t pixels = static_cast<std::size_t>(count) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
    if (static_cast<std::size_t>(in.gcount()) != pixels) {
        throw FormatError("IDX image file truncated: " + path);
    }
    Eigen::MatrixXd images(static_cast<Index>(count), static_cast<Index>(rows * cols));
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < static_cast<std::size_t>(rows) * cols; ++j) {
            images(static_cast<Index>(i), static_cast<Index>(j)) =
                static_cast<double>(raw[i * rows * cols + j]) / 255.0;
        }
    }
    return images;
}

/// IDX1 labels (magic 0x00000801).
inline std::vector<int> load_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open IDX label file: " + path);
    const auto magic = detail::read_be_u32(in, path);
    if (magic != 0x00000801u) {
        throw FormatError("bad IDX label magic in " + path + " (expected 0x00000801)");
    }
    const auto count = detail::read_be_u32(in, path);
    std::vector<unsigned char> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) {
        throw FormatError("IDX label file truncated: " + path);
    }
    return std::vector<int>(raw.begin(), raw.end());
}

struct LabeledData {
    IncompleteMatrix data;
    std::vector<int> labels;
};

/// Balanced class sample from IDX digit files: `per_class` rows per requested
/// class, drawn without replacement with a seeded engine, rows in class order.
inline LabeledData load_idx_digits(const std::string& images_path, const std::string& labels_path,
                                   const std::vector<int>& classes, Index per_class,
                                   std::uint64_t seed) {
    if (classes.empty()) throw std::invalid_argument("load_idx_digits: class list is empty");
    if (per_class < 1) throw std::invalid_argument("load_idx_digits: per_class must be positive");
    const Eigen::MatrixXd images = load_idx_images(images_path);
    const std::vector<int> labels = load_idx_labels(labels_path);
    if (static_cast<Index>(labels.size()) != images.rows()) {
        throw FormatError("IDX image/label counts differ: " + std::to_string(images.rows()) + " vs " +
                          std::to_string(labels.size()));
    }
    auto eng = rng::make_engine(seed);
    std::vector<Index> selected;
    std::vector<int> selected_labels;
    for (const int cls : classes) {
        std::vector<Index> pool;
        for (Index i = 0; i < images.rows(); ++i) {
            if (labels[static_cast<std::size_t>(i)] == cls) pool.push_back(i);
        }
        if (static_cast<Index>(pool.size()) < per_class) {
            throw std::invalid_argument("load_idx_digits: class " + std::to_string(cls) + " has only " +
                                        std::to_string(pool.size()) + " rows, need " +
                                        std::to_string(per_class));
        }
        const auto picks = rng::sample_without_replacement(eng, pool.size(),
                                                           static_cast<std::size_t>(per_class));
        for (const auto p : picks) {
            selected.push_back(pool[p]);
            selected_labels.push_back(cls);
        }
    }
    LabeledData out;
    out.data.values.resize(static_cast<Index>(selected.size()), images.cols());
    for (Index r = 0; r < static_cast<Index>(selected.size()); ++r) {
        out.data.values.row(r) = images.row(selected[static_cast<std::size_t>(r)]);
    }
    out.data.mask = BoolMatrix::Constant(out.data.values.rows(), out.data.values.cols(), true);
    out.labels = std::move(selected_labels);
    return out;
}

}  // namespace pckid
