#pragma once

// Dataset ingestion (CSV + schema), one-of-K categorical encoding, z-score
// normalization, stratified fold construction and label-budget selection.

#include "rwm/common.hpp"
#include "rwm/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rwm {

enum class ColumnKind { continuous, categorical, label };

struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::continuous;
    /// Ordered category names (categorical columns; optional for the label).
    std::vector<std::string> categories;
};

/// Column layout of a dataset. Holds D (continuous count), E (categorical
/// count) and the one-of-K block offsets whose total width is E'.
class Schema {
  public:
    Schema() = default;

    explicit Schema(std::vector<Column> columns) : columns_{std::move(columns)} {
        std::set<std::string> names;
        std::size_t offset = 0;
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            const auto& c = columns_[i];
            if (c.name.empty()) throw invalid_argument("schema: empty column name");
            if (!names.insert(c.name).second) throw invalid_argument("schema: duplicate column '" + c.name + "'");
            std::set<std::string> cats(c.categories.begin(), c.categories.end());
            if (cats.size() != c.categories.size())
                throw invalid_argument("schema: duplicate category in column '" + c.name + "'");
            switch (c.kind) {
                case ColumnKind::continuous:
                    if (!c.categories.empty())
                        throw invalid_argument("schema: continuous column '" + c.name + "' lists categories");
                    ++continuous_;
                    break;
                case ColumnKind::categorical:
                    if (c.categories.empty())
                        throw invalid_argument("schema: categorical column '" + c.name + "' has no categories");
                    block_offsets_.push_back(offset);
                    block_sizes_.push_back(c.categories.size());
                    offset += c.categories.size();
                    break;
                case ColumnKind::label:
                    if (label_) throw invalid_argument("schema: more than one label column");
                    label_ = i;
                    break;
            }
        }
        if (!label_) throw invalid_argument("schema: missing label column");
        encoded_ = offset;
    }

    [[nodiscard]] const std::vector<Column>& columns() const noexcept { return columns_; }
    /// D
    [[nodiscard]] std::size_t continuous_dim() const noexcept { return continuous_; }
    /// E
    [[nodiscard]] std::size_t categorical_count() const noexcept { return block_sizes_.size(); }
    /// E' = sum of K_e
    [[nodiscard]] std::size_t encoded_dim() const noexcept { return encoded_; }
    [[nodiscard]] std::size_t label_column() const noexcept { return *label_; }
    [[nodiscard]] const std::vector<std::size_t>& block_offsets() const noexcept { return block_offsets_; }
    [[nodiscard]] const std::vector<std::size_t>& block_sizes() const noexcept { return block_sizes_; }

  private:
    std::vector<Column> columns_;
    std::size_t continuous_ = 0;
    std::size_t encoded_ = 0;
    std::vector<std::size_t> block_offsets_;
    std::vector<std::size_t> block_sizes_;
    std::optional<std::size_t> label_;
};

/// Schema text: one line per column, `name,kind[,cat1|cat2|...]`. Blank lines
/// and lines starting with '#' are ignored.
inline Schema parse_schema(std::istream& is) {
    std::vector<Column> cols;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto parts = split(t, ',');
        if (parts.size() < 2 || parts.size() > 3) throw parse_error("schema: expected name,kind[,categories]", lineno);
        Column c;
        c.name = std::string{trim(parts[0])};
        const auto kind = trim(parts[1]);
        if (kind == "continuous") c.kind = ColumnKind::continuous;
        else if (kind == "categorical") c.kind = ColumnKind::categorical;
        else if (kind == "label") c.kind = ColumnKind::label;
        else throw parse_error("schema: unknown column kind '" + std::string{kind} + "'", lineno);
        if (parts.size() == 3)
            for (const auto cat : split(parts[2], '|')) c.categories.emplace_back(trim(cat));
        cols.push_back(std::move(c));
    }
    try {
        return Schema{std::move(cols)};
    } catch (const invalid_argument& e) {
        throw parse_error(e.what(), lineno);
    }
}

inline Schema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open schema file '" + path + "'");
    return parse_schema(in);
}

/// One observation: z-scored continuous part, one-of-K categorical bits and
/// an optional class id (index into Dataset::class_ids).
struct Sample {
    Vector continuous;
    std::vector<std::uint8_t> categorical;
    std::optional<int> label;
};

struct NormStats {
    double mean = 0.0;
    double stddev = 1.0;
};

struct Dataset {
    Schema schema;
    std::vector<Sample> samples;
    std::vector<std::string> class_ids;
    /// Present iff zscore_normalize was applied.
    std::optional<std::vector<NormStats>> norm_stats;

    [[nodiscard]] std::size_t size() const noexcept { return samples.size(); }
    [[nodiscard]] std::size_t num_classes() const noexcept { return class_ids.size(); }

    /// Continuous part of the selected samples as an (n x D) row matrix.
    [[nodiscard]] Matrix continuous_matrix(std::span<const std::size_t> idx) const {
        const auto d = static_cast<Eigen::Index>(schema.continuous_dim());
        Matrix X(static_cast<Eigen::Index>(idx.size()), d);
        for (std::size_t r = 0; r < idx.size(); ++r) X.row(static_cast<Eigen::Index>(r)) = samples.at(idx[r]).continuous;
        return X;
    }

    [[nodiscard]] Matrix continuous_matrix() const {
        std::vector<std::size_t> all(samples.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return continuous_matrix(all);
    }

    [[nodiscard]] std::vector<Sample> subset(std::span<const std::size_t> idx) const {
        std::vector<Sample> out;
        out.reserve(idx.size());
        for (const auto i : idx) out.push_back(samples.at(i));
        return out;
    }
};

/// Index of `value` inside categorical column `col`, throws if unknown.
inline std::size_t encode_category(const Column& col, std::string_view value) {
    const auto it = std::find(col.categories.begin(), col.categories.end(), value);
    if (it == col.categories.end())
        throw invalid_argument("unknown category '" + std::string{value} + "' for column '" + col.name + "'");
    return static_cast<std::size_t>(it - col.categories.begin());
}

/// Category name of categorical block `block` in an encoded vector.
inline const std::string& decode_category(const Schema& schema, std::span<const std::uint8_t> bits, std::size_t block) {
    const auto off = schema.block_offsets().at(block);
    const auto size = schema.block_sizes().at(block);
    std::size_t col_index = 0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < schema.columns().size(); ++i) {
        if (schema.columns()[i].kind != ColumnKind::categorical) continue;
        if (seen++ == block) {
            col_index = i;
            break;
        }
    }
    for (std::size_t j = 0; j < size; ++j)
        if (bits[off + j] != 0) return schema.columns()[col_index].categories[j];
    throw invalid_argument("decode_category: block has no set bit");
}

/// Reads a comma-separated file with a header row. Label cells equal to "?"
/// or empty produce unlabeled samples.
inline Dataset load_dataset(std::istream& csv, const Schema& schema) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(csv, line)) {
        ++lineno;
        if (!trim(line).empty()) break;
    }
    if (trim(line).empty()) throw parse_error("csv: missing header row", lineno);
    const auto header = split(trim(line), ',');
    const auto& cols = schema.columns();
    if (header.size() != cols.size())
        throw parse_error("csv: header has " + std::to_string(header.size()) + " columns, schema has " +
                              std::to_string(cols.size()),
                          lineno);
    // position of each schema column in the file
    std::vector<std::size_t> where(cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto it = std::find_if(header.begin(), header.end(), [&](auto h) { return trim(h) == cols[c].name; });
        if (it == header.end()) {
            if (cols[c].kind == ColumnKind::label) throw parse_error("csv: missing label column '" + cols[c].name + "'", lineno);
            throw parse_error("csv: missing column '" + cols[c].name + "'", lineno);
        }
        where[c] = static_cast<std::size_t>(it - header.begin());
    }

    const auto& label_col = cols[schema.label_column()];
    std::vector<std::string> raw_labels;
    std::vector<Sample> samples;
    while (std::getline(csv, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty()) continue;
        const auto cells = split(t, ',');
        if (cells.size() != cols.size())
            throw parse_error("csv: row has " + std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(cols.size()),
                              lineno);
        Sample s;
        s.continuous.resize(static_cast<Eigen::Index>(schema.continuous_dim()));
        s.categorical.assign(schema.encoded_dim(), 0);
        Eigen::Index ci = 0;
        std::size_t block = 0;
        std::string label_text;
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const auto cell = trim(cells[where[c]]);
            switch (cols[c].kind) {
                case ColumnKind::continuous: {
                    double v = 0.0;
                    if (!try_parse_real(cell, v) || !std::isfinite(v))
                        throw parse_error("csv: malformed value '" + std::string{cell} + "' in column '" + cols[c].name + "'",
                                          lineno);
                    s.continuous[ci++] = v;
                    break;
                }
                case ColumnKind::categorical: {
                    std::size_t idx = 0;
                    try {
                        idx = encode_category(cols[c], cell);
                    } catch (const invalid_argument& e) {
                        throw parse_error(std::string{"csv: "} + e.what(), lineno);
                    }
                    s.categorical[schema.block_offsets()[block] + idx] = 1;
                    ++block;
                    break;
                }
                case ColumnKind::label:
                    label_text = std::string{cell};
                    break;
            }
        }
        if (!label_text.empty() && label_text != "?" && !label_col.categories.empty() &&
            std::find(label_col.categories.begin(), label_col.categories.end(), label_text) == label_col.categories.end())
            throw parse_error("csv: unknown class '" + label_text + "'", lineno);
        raw_labels.push_back(label_text);
        samples.push_back(std::move(s));
    }

    Dataset ds;
    ds.schema = schema;
    if (!label_col.categories.empty()) {
        ds.class_ids = label_col.categories;
    } else {
        std::set<std::string> seen;
        for (const auto& l : raw_labels)
            if (!l.empty() && l != "?") seen.insert(l);
        ds.class_ids.assign(seen.begin(), seen.end());
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& l = raw_labels[i];
        if (l.empty() || l == "?") continue;
        const auto it = std::find(ds.class_ids.begin(), ds.class_ids.end(), l);
        samples[i].label = static_cast<int>(it - ds.class_ids.begin());
    }
    ds.samples = std::move(samples);
    return ds;
}

inline Dataset load_dataset(const std::string& csv_path, const std::string& schema_path) {
    const Schema schema = load_schema(schema_path);
    std::ifstream in(csv_path);
    if (!in) throw error("cannot open data file '" + csv_path + "'");
    return load_dataset(in, schema);
}

/// Writes a dataset back to CSV using the schema's column order.
inline void write_dataset(std::ostream& os, const Dataset& ds) {
    const auto& cols = ds.schema.columns();
    for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c].name;
    os << '\n';
    for (const auto& s : ds.samples) {
        Eigen::Index ci = 0;
        std::size_t block = 0;
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (c) os << ',';
            switch (cols[c].kind) {
                case ColumnKind::continuous: os << format_real(s.continuous[ci++]); break;
                case ColumnKind::categorical: os << decode_category(ds.schema, s.categorical, block++); break;
                case ColumnKind::label: os << (s.label ? ds.class_ids[static_cast<std::size_t>(*s.label)] : "?"); break;
            }
        }
        os << '\n';
    }
}

inline void write_schema(std::ostream& os, const Schema& schema) {
    static constexpr const char* kinds[] = {"continuous", "categorical", "label"};
    for (const auto& c : schema.columns()) {
        os << c.name << ',' << kinds[static_cast<int>(c.kind)];
        for (std::size_t j = 0; j < c.categories.size(); ++j) os << (j ? '|' : ',') << c.categories[j];
        os << '\n';
    }
}

/// Z-scores every continuous column with the sample (N-1) standard
/// deviation. Constant columns map to zero (their stddev is recorded as 1).
inline Dataset zscore_normalize(Dataset ds) {
    const auto d = static_cast<Eigen::Index>(ds.schema.continuous_dim());
    std::vector<NormStats> stats(static_cast<std::size_t>(d));
    const double n = static_cast<double>(ds.size());
    for (Eigen::Index j = 0; j < d; ++j) {
        double mean = 0.0;
        for (const auto& s : ds.samples) mean += s.continuous[j];
        mean /= n > 0 ? n : 1.0;
        double ss = 0.0;
        for (const auto& s : ds.samples) ss += (s.continuous[j] - mean) * (s.continuous[j] - mean);
        double sd = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) sd = 1.0;
        for (auto& s : ds.samples) s.continuous[j] = (s.continuous[j] - mean) / sd;
        stats[static_cast<std::size_t>(j)] = {mean, sd};
    }
    ds.norm_stats = std::move(stats);
    return ds;
}

// ---------------------------------------------------------------------------
// Folds

/// Labeled/unlabeled split of one outer training set plus the inner folds
/// over its labeled part.
struct OuterSplit {
    std::vector<std::size_t> labeled_idx;
    std::vector<std::size_t> unlabeled_idx;
    std::vector<std::vector<std::size_t>> inner_folds;
};

struct FoldPlan {
    std::vector<std::vector<std::size_t>> outer_folds;
    /// One entry per outer fold; empty until select_labeled_subset ran.
    std::vector<OuterSplit> splits;
    std::uint64_t seed = 0;

    [[nodiscard]] const std::vector<std::size_t>& test_indices(std::size_t outer) const { return outer_folds.at(outer); }

    [[nodiscard]] std::vector<std::size_t> training_indices(std::size_t outer) const {
        std::vector<std::size_t> out;
        for (std::size_t f = 0; f < outer_folds.size(); ++f)
            if (f != outer) out.insert(out.end(), outer_folds[f].begin(), outer_folds[f].end());
        std::sort(out.begin(), out.end());
        return out;
    }
};

namespace detail {

// Stratified round-robin assignment. `strata` maps each element to a stratum
// key; element order within a stratum is shuffled with rng. The round-robin
// position carries over between strata so fold sizes stay balanced.
inline std::vector<std::vector<std::size_t>> stratified_partition(const std::vector<std::size_t>& items,
                                                                  const std::vector<int>& strata, std::size_t k,
                                                                  Rng& rng) {
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < items.size(); ++i) groups[strata[i]].push_back(items[i]);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t pos = 0;
    for (auto& [key, members] : groups) {
        shuffle(members, rng);
        for (const auto m : members) folds[pos++ % k].push_back(m);
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

}  // namespace detail

/// Stratified k-fold partition of the whole dataset. Unlabeled samples form
/// their own stratum.
inline FoldPlan stratified_kfold(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw invalid_argument("stratified_kfold: k must be at least 2");
    std::vector<std::size_t> counts(ds.num_classes(), 0);
    for (const auto& s : ds.samples)
        if (s.label) ++counts[static_cast<std::size_t>(*s.label)];
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] < k)
            throw invalid_argument("stratified_kfold: class '" + ds.class_ids[c] + "' has " + std::to_string(counts[c]) +
                                   " labeled members, need at least " + std::to_string(k));
    std::vector<std::size_t> items(ds.size());
    std::iota(items.begin(), items.end(), std::size_t{0});
    std::vector<int> strata(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) strata[i] = ds.samples[i].label ? *ds.samples[i].label : -1;
    Rng rng = make_rng(seed, 0x4f55);
    FoldPlan plan;
    plan.seed = seed;
    plan.outer_folds = detail::stratified_partition(items, strata, k, rng);
    plan.splits.resize(k);
    return plan;
}

enum class LabelBudget { four_times_classes, ten_percent, all };

/// How model density ranks candidates for the initial labeled set.
enum class DensityWeighting {
    /// probability proportional to p(x)
    raw,
    /// probability proportional to the rank of p(x) inside the class stratum
    rank,
};

struct SelectionOptions {
    DensityWeighting weighting = DensityWeighting::raw;
    std::size_t labels_per_class = 4;
    std::size_t inner_folds = 4;
};

namespace detail {

// Weighted draw of `count` items without replacement.
inline std::vector<std::size_t> weighted_draw(std::vector<std::size_t> items, std::vector<double> weights,
                                              std::size_t count, Rng& rng) {
    std::vector<std::size_t> out;
    count = std::min(count, items.size());
    while (out.size() < count) {
        double total = 0.0;
        for (const double w : weights) total += w;
        std::size_t pick = items.size() - 1;
        if (total > 0.0) {
            const double u = uniform01(rng) * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < items.size(); ++i) {
                acc += weights[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(items.size())), items.size() - 1);
        }
        out.push_back(items[pick]);
        items.erase(items.begin() + static_cast<std::ptrdiff_t>(pick));
        weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return out;
}

}  // namespace detail

/// Number of labeled samples a budget yields for a training set of size
/// `train_size` with `classes` classes.
inline std::size_t budget_size(LabelBudget budget, std::size_t classes, std::size_t train_size,
                               std::size_t labels_per_class = 4) {
    switch (budget) {
        case LabelBudget::four_times_classes: return labels_per_class * classes;
        case LabelBudget::ten_percent:
            return std::max(labels_per_class * classes, (train_size + 9) / 10);
        case LabelBudget::all: return train_size;
    }
    return train_size;
}

/// Chooses L_train u L_val for outer fold `outer` and fills the inner folds.
///
/// four_times_classes draws `labels_per_class` samples per class, without
/// replacement, with probability driven by the model density. ten_percent
/// keeps that draw (same seed) and tops it up uniformly to ceil(|L| / 10).
/// all labels every labeled training sample. Samples without a label in the
/// dataset always end up in U.
/// A null model draws uniformly inside each class.
inline FoldPlan select_labeled_subset(const Dataset& ds, FoldPlan plan, std::size_t outer, LabelBudget budget,
                                      const MixtureModel* model, std::uint64_t seed, const SelectionOptions& opt = {}) {
    if (outer >= plan.outer_folds.size()) throw invalid_argument("select_labeled_subset: outer fold out of range");
    if (plan.splits.size() != plan.outer_folds.size()) plan.splits.resize(plan.outer_folds.size());
    const auto train = plan.training_indices(outer);

    std::vector<std::vector<std::size_t>> per_class(ds.num_classes());
    for (const auto i : train)
        if (ds.samples[i].label) per_class[static_cast<std::size_t>(*ds.samples[i].label)].push_back(i);

    std::size_t present = 0;
    for (const auto& members : per_class) present += members.empty() ? 0 : 1;
    if (present < 1) throw invalid_argument("select_labeled_subset: no labeled training samples");

    std::vector<std::size_t> labeled;
    if (budget == LabelBudget::all) {
        for (const auto& members : per_class) labeled.insert(labeled.end(), members.begin(), members.end());
    } else {
        if (opt.labels_per_class < 1) throw invalid_argument("select_labeled_subset: budget below 1 per class");
        Rng rng = make_rng(seed, 0x5345 + outer);
        for (std::size_t c = 0; c < per_class.size(); ++c) {
            const auto& members = per_class[c];
            if (members.empty())
                throw invalid_argument("select_labeled_subset: class '" + ds.class_ids[c] +
                                       "' has no training samples, budget below 1 per class");
            std::vector<double> logd(members.size(), 0.0);
            if (model)
                for (std::size_t m = 0; m < members.size(); ++m)
                    logd[m] = log_density(*model, ds.samples[members[m]].continuous);
            std::vector<double> weights(members.size());
            if (opt.weighting == DensityWeighting::raw) {
                const double mx = *std::max_element(logd.begin(), logd.end());
                for (std::size_t m = 0; m < members.size(); ++m) weights[m] = std::exp(logd[m] - mx);
            } else {
                std::vector<std::size_t> order(members.size());
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return logd[a] < logd[b]; });
                for (std::size_t r = 0; r < order.size(); ++r) weights[order[r]] = static_cast<double>(r + 1);
            }
            const auto drawn = detail::weighted_draw(members, weights, opt.labels_per_class, rng);
            labeled.insert(labeled.end(), drawn.begin(), drawn.end());
        }
        if (budget == LabelBudget::ten_percent) {
            const std::size_t target = budget_size(budget, ds.num_classes(), train.size(), opt.labels_per_class);
            std::set<std::size_t> chosen(labeled.begin(), labeled.end());
            std::vector<std::size_t> rest;
            for (const auto& members : per_class)
                for (const auto i : members)
                    if (!chosen.count(i)) rest.push_back(i);
            std::sort(rest.begin(), rest.end());
            Rng top_up = make_rng(seed, 0x5450 + outer);
            shuffle(rest, top_up);
            for (std::size_t i = 0; i < rest.size() && labeled.size() < target; ++i) labeled.push_back(rest[i]);
        }
    }
    std::sort(labeled.begin(), labeled.end());

    OuterSplit split;
    split.labeled_idx = labeled;
    std::set_difference(train.begin(), train.end(), labeled.begin(), labeled.end(), std::back_inserter(split.unlabeled_idx));
    std::vector<int> strata(labeled.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) strata[i] = *ds.samples[labeled[i]].label;
    Rng inner_rng = make_rng(seed, 0x494e + outer);
    split.inner_folds = detail::stratified_partition(labeled, strata, opt.inner_folds, inner_rng);
    plan.splits[outer] = std::move(split);
    return plan;
}

inline FoldPlan select_labeled_subset(const Dataset& ds, FoldPlan plan, std::size_t outer, LabelBudget budget,
                                      const MixtureModel& model, std::uint64_t seed, const SelectionOptions& opt = {}) {
    return select_labeled_subset(ds, std::move(plan), outer, budget, &model, seed, opt);
}

inline LabelBudget parse_budget(std::string_view s) {
    if (s == "four_times_classes") return LabelBudget::four_times_classes;
    if (s == "ten_percent") return LabelBudget::ten_percent;
    if (s == "all") return LabelBudget::all;
    throw invalid_argument("unknown label budget '" + std::string{s} + "'");
}

inline const char* budget_name(LabelBudget b) {
    switch (b) {
        case LabelBudget::four_times_classes: return "four_times_classes";
        case LabelBudget::ten_percent: return "ten_percent";
        case LabelBudget::all: return "all";
    }
    return "?";
}

inline DensityWeighting parse_weighting(std::string_view s) {
    if (s == "raw") return DensityWeighting::raw;
    if (s == "rank") return DensityWeighting::rank;
    throw invalid_argument("unknown density weighting '" + std::string{s} + "'");
}

// ---------------------------------------------------------------------------
// Fold manifest:
//
//   rwm-folds 1
//   seed <s>
//   outer <k>
//   fold <i> <n> <indices...>
//   split <i>
//   labeled <n> <indices...>
//   unlabeled <n> <indices...>
//   inner <j> <n> <indices...>

namespace detail {
inline void write_index_list(std::ostream& os, const std::vector<std::size_t>& v) {
    os << ' ' << v.size();
    for (const auto i : v) os << ' ' << i;
    os << '\n';
}

inline std::vector<std::size_t> read_index_list(const std::vector<std::string_view>& toks, std::size_t first,
                                                std::size_t lineno) {
    if (toks.size() <= first) throw parse_error("manifest: missing count", lineno);
    const auto n = parse_int<std::size_t>(toks[first], lineno);
    if (toks.size() != first + 1 + n) throw parse_error("manifest: index count mismatch", lineno);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = parse_int<std::size_t>(toks[first + 1 + i], lineno);
    return out;
}
}  // namespace detail

inline void write_manifest(std::ostream& os, const FoldPlan& plan) {
    os << "rwm-folds 1\nseed " << plan.seed << "\nouter " << plan.outer_folds.size() << '\n';
    for (std::size_t f = 0; f < plan.outer_folds.size(); ++f) {
        os << "fold " << f;
        detail::write_index_list(os, plan.outer_folds[f]);
    }
    for (std::size_t f = 0; f < plan.splits.size(); ++f) {
        const auto& s = plan.splits[f];
        if (s.labeled_idx.empty() && s.unlabeled_idx.empty()) continue;
        os << "split " << f << "\nlabeled";
        detail::write_index_list(os, s.labeled_idx);
        os << "unlabeled";
        detail::write_index_list(os, s.unlabeled_idx);
        for (std::size_t j = 0; j < s.inner_folds.size(); ++j) {
            os << "inner " << j;
            detail::write_index_list(os, s.inner_folds[j]);
        }
    }
}

inline FoldPlan read_manifest(std::istream& is) {
    FoldPlan plan;
    std::string line;
    std::size_t lineno = 0;
    OuterSplit* current = nullptr;
    bool header = false;
    while (std::getline(is, line)) {
        ++lineno;
        const auto toks = tokens(line);
        if (toks.empty()) continue;
        const auto key = toks[0];
        if (!header) {
            if (key != "rwm-folds" || toks.size() != 2 || toks[1] != "1") throw parse_error("manifest: bad header", lineno);
            header = true;
        } else if (key == "seed" && toks.size() == 2) {
            plan.seed = parse_int<std::uint64_t>(toks[1], lineno);
        } else if (key == "outer" && toks.size() == 2) {
            const auto k = parse_int<std::size_t>(toks[1], lineno);
            plan.outer_folds.assign(k, {});
            plan.splits.assign(k, {});
        } else if (key == "fold" && toks.size() >= 3) {
            const auto f = parse_int<std::size_t>(toks[1], lineno);
            if (f >= plan.outer_folds.size()) throw parse_error("manifest: fold index out of range", lineno);
            plan.outer_folds[f] = detail::read_index_list(toks, 2, lineno);
        } else if (key == "split" && toks.size() == 2) {
            const auto f = parse_int<std::size_t>(toks[1], lineno);
            if (f >= plan.splits.size()) throw parse_error("manifest: split index out of range", lineno);
            current = &plan.splits[f];
        } else if ((key == "labeled" || key == "unlabeled") && current) {
            (key == "labeled" ? current->labeled_idx : current->unlabeled_idx) = detail::read_index_list(toks, 1, lineno);
        } else if (key == "inner" && current && toks.size() >= 3) {
            const auto j = parse_int<std::size_t>(toks[1], lineno);
            if (current->inner_folds.size() <= j) current->inner_folds.resize(j + 1);
            current->inner_folds[j] = detail::read_index_list(toks, 2, lineno);
        } else {
            throw parse_error("manifest: unexpected line", lineno);
        }
    }
    if (!header) throw parse_error("manifest: empty input", lineno);
    return plan;
}

}  // namespace rwm
