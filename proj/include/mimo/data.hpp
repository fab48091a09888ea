#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mimo/graph.hpp"
#include "mimo/types.hpp"

namespace mimo {

struct Sample {
    Matrix x;  ///< q0 x n
    std::size_t label = 0;
};

struct Dataset {
    std::size_t n = 0;
    std::size_t q0 = 1;
    std::size_t c = 2;
    std::string meta;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

/// Throws if any sample has the wrong shape, a non-finite entry, or a label
/// outside [0, c).
void validate(const Dataset& ds);

/// Signals of the chosen samples side by side: q0 x (B*n), sample b in
/// columns b*n .. b*n+n-1.
Matrix batch_signals(const Dataset& ds, std::span<const std::size_t> indices);

/// Source localization: x = W^t delta_c with c uniform over nodes and t
/// uniform over {0, ..., t_max}; W is the 0/1 adjacency. Labels are nodes.
Dataset synth_source_localization(const Graph& g, std::size_t n_samples, std::size_t t_max, Rng& rng);

/// One diffused sample with fixed source and time.
Sample diffuse_source(const Gso& adjacency, std::size_t source, std::size_t t);

/// Adds i.i.d. N(0, sigma2) noise to every signal entry.
Dataset add_noise(const Dataset& ds, double sigma2, Rng& rng);

enum class DatasetErrorKind { Io, MalformedHeader, DimensionMismatch, TruncatedPayload, InvalidLabel };

class DatasetFormatError : public std::runtime_error {
public:
    DatasetFormatError(DatasetErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    DatasetErrorKind kind() const { return kind_; }

private:
    DatasetErrorKind kind_;
};

// Binary layout (all integers little-endian):
//   0  char[4]  magic "MGDS"
//   4  u32      version (1)
//   8  u64      n
//  16  u64      q0
//  24  u64      c
//  32  u64      sample count
//  40  u64      meta length in bytes
//  48  meta bytes
//      count * q0 * n f64 signals, sample-major then row-major
//      count u64 labels
inline constexpr std::size_t kDatasetHeaderBytes = 48;
inline constexpr std::uint32_t kDatasetVersion = 1;

std::uint64_t dataset_file_size(const Dataset& ds);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace mimo
