#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dendseg {

/// Fraction mode shuffles and slices; grouped mode assigns whole groups.
struct SplitSpec {
    enum class Mode { fraction, grouped };

    Mode mode = Mode::fraction;
    double train = 0.7;
    double val = 0.2;
    double test = 0.1;
    std::vector<int> train_groups, val_groups, test_groups;
    std::uint64_t seed = 0;
};

/// Item indices per part, each sorted ascending.
struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// val = floor(n * val), test = floor(n * test), the remainder goes to train.
/// `groups[i]` is the group of item i and is only read in grouped mode.
/// Throws EmptyDataset and BadFractions.
[[nodiscard]] SplitIndices split_dataset(std::size_t item_count, const SplitSpec& spec, std::span<const int> groups = {});

template <typename T>
struct Split {
    std::vector<T> train, val, test;
};

template <typename T>
[[nodiscard]] Split<T> apply_split(const std::vector<T>& items, const SplitIndices& idx) {
    Split<T> out;
    for (auto i : idx.train) out.train.push_back(items[i]);
    for (auto i : idx.val) out.val.push_back(items[i]);
    for (auto i : idx.test) out.test.push_back(items[i]);
    return out;
}

} // namespace dendseg
