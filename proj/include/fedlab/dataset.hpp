#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlab/csvio.hpp"

namespace fedlab {

/// Labeled feature matrix: one row per sample, integer class labels in
/// [0, classes). The unit every partitioner, trainer and evaluator works on.
struct Dataset {
    Eigen::MatrixXd features; // n x d
    Eigen::VectorXi labels;   // n
    int classes = 0;

    Eigen::Index size() const { return features.rows(); }
    Eigen::Index dims() const { return features.cols(); }
};

inline void validate(const Dataset& data) {
    if (data.features.rows() != data.labels.size())
        throw std::invalid_argument("dataset: row count does not match label count");
    if (data.classes < 0) throw std::invalid_argument("dataset: negative class count");
    if (!data.features.allFinite())
        throw std::invalid_argument("dataset: non-finite feature entry");
    for (Eigen::Index i = 0; i < data.labels.size(); ++i) {
        if (data.labels[i] < 0 || data.labels[i] >= data.classes)
            throw std::invalid_argument("dataset: label out of range at row " + std::to_string(i));
    }
}

/// Rows of `data` selected by index, in the given order. Indices may repeat.
inline Dataset take_rows(const Dataset& data, const std::vector<Eigen::Index>& idx) {
    Dataset out;
    out.classes = data.classes;
    out.features.resize(static_cast<Eigen::Index>(idx.size()), data.dims());
    out.labels.resize(static_cast<Eigen::Index>(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(idx[i]);
        out.labels[static_cast<Eigen::Index>(i)] = data.labels[idx[i]];
    }
    return out;
}

inline Dataset concat(const std::vector<Dataset>& parts) {
    Dataset out;
    Eigen::Index n = 0, d = 0;
    for (const auto& p : parts) {
        n += p.size();
        if (p.size() > 0) d = p.dims();
        out.classes = std::max(out.classes, p.classes);
    }
    out.features.resize(n, d);
    out.labels.resize(n);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        if (p.size() == 0) continue;
        out.features.middleRows(at, p.size()) = p.features;
        out.labels.segment(at, p.size()) = p.labels;
        at += p.size();
    }
    return out;
}

/// CSV layout: header `f0,...,f{d-1},label`, floats with 17 significant
/// digits (exact double round-trip), labels as integers.
inline void write_csv(const Dataset& data, const std::string& path) {
    CsvWriter w(path);
    std::vector<std::string> header;
    for (Eigen::Index j = 0; j < data.dims(); ++j) header.push_back("f" + std::to_string(j));
    header.push_back("label");
    w.row(header);
    std::vector<std::string> cells(static_cast<size_t>(data.dims()) + 1);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        for (Eigen::Index j = 0; j < data.dims(); ++j)
            cells[static_cast<size_t>(j)] = format_double_sig(data.features(i, j));
        cells.back() = std::to_string(data.labels[i]);
        w.row(cells);
    }
    w.close();
}

inline Dataset read_csv(const std::string& path, int classes = 0) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header.back() != "label")
        throw std::runtime_error("bad dataset header in " + path);
    const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - 1;

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (static_cast<Eigen::Index>(cells.size()) != d + 1)
            throw std::runtime_error("bad field count in " + path);
        std::vector<double> r(static_cast<size_t>(d));
        for (Eigen::Index j = 0; j < d; ++j) r[static_cast<size_t>(j)] = parse_double(cells[static_cast<size_t>(j)]);
        rows.push_back(std::move(r));
        labels.push_back(static_cast<int>(parse_long(cells.back())));
    }

    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), d);
    out.labels.resize(static_cast<Eigen::Index>(labels.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        for (Eigen::Index j = 0; j < d; ++j) out.features(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<size_t>(j)];
        out.labels[static_cast<Eigen::Index>(i)] = labels[i];
    }
    int max_label = -1;
    for (int l : labels) max_label = std::max(max_label, l);
    out.classes = classes > 0 ? classes : max_label + 1;
    validate(out);
    return out;
}

} // namespace fedlab
