#include "dendseg/split.hpp"

#include "dendseg/error.hpp"
#include "dendseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace dendseg {

namespace {

SplitIndices split_by_fraction(std::size_t n, const SplitSpec& spec) {
    for (double f : {spec.train, spec.val, spec.test})
        if (!(f >= 0.0 && f <= 1.0)) fail(ErrorCode::BadFractions, "fractions must lie in [0, 1]");
    if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) fail(ErrorCode::BadFractions, "fractions must sum to 1");

    const auto part = [n](double f) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9)); };
    const std::size_t n_val = part(spec.val);
    const std::size_t n_test = part(spec.test);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(spec.seed, "split"));
    shuffle(std::span(order), rng);

    SplitIndices out;
    out.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), order.end());
    for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
    return out;
}

SplitIndices split_by_group(std::size_t n, const SplitSpec& spec, std::span<const int> groups) {
    if (groups.size() != n)
        fail(ErrorCode::BadFractions, std::to_string(groups.size()) + " group ids for " + std::to_string(n) + " items");
    std::set<int> assigned;
    for (const auto* list : {&spec.train_groups, &spec.val_groups, &spec.test_groups})
        for (int g : *list)
            if (!assigned.insert(g).second) fail(ErrorCode::BadFractions, "group " + std::to_string(g) + " assigned twice");
    const std::set<int> present(groups.begin(), groups.end());
    if (assigned != present) fail(ErrorCode::BadFractions, "group assignment does not match the groups present");

    const std::set<int> tr(spec.train_groups.begin(), spec.train_groups.end());
    const std::set<int> va(spec.val_groups.begin(), spec.val_groups.end());
    SplitIndices out;
    for (std::size_t i = 0; i < n; ++i) {
        if (tr.count(groups[i])) out.train.push_back(i);
        else if (va.count(groups[i])) out.val.push_back(i);
        else out.test.push_back(i);
    }
    return out;
}

} // namespace

SplitIndices split_dataset(std::size_t item_count, const SplitSpec& spec, std::span<const int> groups) {
    if (item_count == 0) fail(ErrorCode::EmptyDataset, "nothing to split");
    return spec.mode == SplitSpec::Mode::fraction ? split_by_fraction(item_count, spec)
                                                  : split_by_group(item_count, spec, groups);
}

} // namespace dendseg
