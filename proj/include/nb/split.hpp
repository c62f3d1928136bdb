#pragma once

#include "nb/config.hpp"
#include "nb/domain.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace nb::split {

// Units assigned to a split of ratio r out of n: round-half-up, at least 1.
std::size_t split_count(double ratio, std::size_t n);

ExampleSet split_predefined(const ExampleSet& es, const std::map<std::string, SplitLabel>& assignment);

ExampleSet split_cross_subject(const ExampleSet& es, double test_ratio, double valid_ratio,
                               const std::optional<std::string>& stratify_by, std::uint64_t seed);

ExampleSet split_leave_concept_out(const ExampleSet& es, double test_ratio, double valid_ratio,
                                   std::uint64_t seed);

// holdout: "last N sessions" or "last N runs". Validation examples are a
// seeded random carve of round(valid_ratio * n) non-test examples.
ExampleSet split_within_subject(const ExampleSet& es, const std::string& holdout, double valid_ratio,
                                std::uint64_t seed);

ExampleSet split_random(const ExampleSet& es, double test_ratio, double valid_ratio,
                        const std::optional<std::string>& stratify_by, std::uint64_t seed);

// Dispatches on the policy kind. Predefined policies read "session=<id>" from
// the holdout spec and carve validation as in split_within_subject.
ExampleSet apply_split(const ExampleSet& es, const config::SplitPolicy& policy);

// example id -> "train" | "valid" | "test"
nlohmann::json split_manifest(const ExampleSet& es);
std::map<std::string, SplitLabel> parse_manifest(const nlohmann::json& manifest);
std::uint64_t split_hash(const ExampleSet& es);

} // namespace nb::split
