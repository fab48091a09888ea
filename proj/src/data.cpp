#include "mimo/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mimo/text_io.hpp"

namespace mimo {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

void validate(const Dataset& ds) {
    for (std::size_t s = 0; s < ds.samples.size(); ++s) {
        const auto& sample = ds.samples[s];
        if (static_cast<std::size_t>(sample.x.rows()) != ds.q0 || static_cast<std::size_t>(sample.x.cols()) != ds.n)
            throw DatasetFormatError(DatasetErrorKind::DimensionMismatch,
                                     "dataset: sample " + std::to_string(s) + " is " + std::to_string(sample.x.rows()) +
                                         "x" + std::to_string(sample.x.cols()) + ", expected " +
                                         std::to_string(ds.q0) + "x" + std::to_string(ds.n));
        if (sample.label >= ds.c)
            throw DatasetFormatError(DatasetErrorKind::InvalidLabel, "dataset: sample " + std::to_string(s) +
                                                                         " has label " + std::to_string(sample.label) +
                                                                         " outside [0, " + std::to_string(ds.c) + ")");
        if (!sample.x.allFinite())
            throw std::invalid_argument("dataset: sample " + std::to_string(s) + " has non-finite entries");
    }
}

Matrix batch_signals(const Dataset& ds, std::span<const std::size_t> indices) {
    const auto n = static_cast<Eigen::Index>(ds.n);
    Matrix out(static_cast<Eigen::Index>(ds.q0), n * static_cast<Eigen::Index>(indices.size()));
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& x = ds.samples.at(indices[b]).x;
        if (x.rows() != out.rows() || x.cols() != n)
            throw std::invalid_argument("batch_signals: sample " + std::to_string(indices[b]) + " has the wrong shape");
        out.middleCols(static_cast<Eigen::Index>(b) * n, n) = x;
    }
    return out;
}

Sample diffuse_source(const Gso& adjacency, std::size_t source, std::size_t t) {
    if (source >= adjacency.size()) throw std::invalid_argument("diffuse_source: source node out of range");
    Matrix x = Matrix::Zero(1, adjacency.size());
    x(0, source) = 1.0;
    Matrix next;
    for (std::size_t step = 0; step < t; ++step) {
        adjacency.apply_into(x, next);
        x.swap(next);
    }
    return {std::move(x), source};
}

Dataset synth_source_localization(const Graph& g, std::size_t n_samples, std::size_t t_max, Rng& rng) {
    const auto n = g.num_nodes();
    if (n_samples == 0) throw std::invalid_argument("synth_source_localization: need at least one sample");
    if (t_max + 1 > n)
        throw std::invalid_argument("synth_source_localization: t_max " + std::to_string(t_max) +
                                    " exceeds N-1 = " + std::to_string(n - 1));
    const Gso w = make_gso(g, GsoKind::Adjacency);
    std::uniform_int_distribution<std::size_t> node(0, n - 1);
    std::uniform_int_distribution<std::size_t> time(0, t_max);
    Dataset ds;
    ds.n = n;
    ds.q0 = 1;
    ds.c = n;
    ds.meta = "source_localization t_max=" + std::to_string(t_max);
    ds.samples.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
        const auto c = node(rng);
        const auto t = time(rng);
        ds.samples.push_back(diffuse_source(w, c, t));
    }
    return ds;
}

Dataset add_noise(const Dataset& ds, double sigma2, Rng& rng) {
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("add_noise: variance must be non-negative");
    Dataset out = ds;
    if (sigma2 == 0.0) return out;
    std::normal_distribution<double> noise(0.0, std::sqrt(sigma2));
    for (auto& sample : out.samples)
        for (Eigen::Index i = 0; i < sample.x.size(); ++i) sample.x.data()[i] += noise(rng);
    out.meta += " sigma2=" + format_double(sigma2);
    return out;
}

namespace {

template <typename T>
void put(std::string& buf, T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buf.append(bytes, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t offset) {
    T value;
    std::memcpy(&value, buf.data() + offset, sizeof(T));
    return value;
}

}  // namespace

std::uint64_t dataset_file_size(const Dataset& ds) {
    return kDatasetHeaderBytes + ds.meta.size() + 8ULL * ds.samples.size() * (ds.q0 * ds.n + 1);
}

void save_dataset(const Dataset& ds, const std::string& path) {
    validate(ds);
    std::string buf;
    buf.reserve(dataset_file_size(ds));
    buf.append("MGDS", 4);
    put<std::uint32_t>(buf, kDatasetVersion);
    put<std::uint64_t>(buf, ds.n);
    put<std::uint64_t>(buf, ds.q0);
    put<std::uint64_t>(buf, ds.c);
    put<std::uint64_t>(buf, ds.samples.size());
    put<std::uint64_t>(buf, ds.meta.size());
    buf.append(ds.meta);
    for (const auto& s : ds.samples)
        buf.append(reinterpret_cast<const char*>(s.x.data()), sizeof(double) * static_cast<std::size_t>(s.x.size()));
    for (const auto& s : ds.samples) put<std::uint64_t>(buf, s.label);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetFormatError(DatasetErrorKind::Io, "cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DatasetFormatError(DatasetErrorKind::Io, "write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetFormatError(DatasetErrorKind::Io, "cannot open '" + path + "' for reading");
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < kDatasetHeaderBytes || buf.compare(0, 4, "MGDS") != 0)
        throw DatasetFormatError(DatasetErrorKind::MalformedHeader, "'" + path + "': not a dataset file (bad magic or short header)");
    const auto version = get<std::uint32_t>(buf, 4);
    if (version != kDatasetVersion)
        throw DatasetFormatError(DatasetErrorKind::MalformedHeader,
                                 "'" + path + "': unsupported dataset version " + std::to_string(version));
    Dataset ds;
    ds.n = get<std::uint64_t>(buf, 8);
    ds.q0 = get<std::uint64_t>(buf, 16);
    ds.c = get<std::uint64_t>(buf, 24);
    const auto count = get<std::uint64_t>(buf, 32);
    const auto meta_len = get<std::uint64_t>(buf, 40);
    if (ds.n == 0 || ds.q0 == 0 || ds.c < 2 || ds.n > (1ULL << 32) || ds.q0 > (1ULL << 32) ||
        count > (1ULL << 40) || meta_len > buf.size())
        throw DatasetFormatError(DatasetErrorKind::MalformedHeader, "'" + path + "': implausible header values");
    if (buf.size() < kDatasetHeaderBytes + meta_len)
        throw DatasetFormatError(DatasetErrorKind::TruncatedPayload, "'" + path + "': truncated metadata");
    ds.meta = buf.substr(kDatasetHeaderBytes, meta_len);

    const std::uint64_t row_values = ds.q0 * ds.n;
    const std::uint64_t payload = buf.size() - kDatasetHeaderBytes - meta_len;
    const std::uint64_t expected = 8 * count * (row_values + 1);
    if (payload != expected) {
        // A payload that is a whole number of fixed-width samples, just not
        // the declared width, means the header disagrees with the data.
        if (count > 0 && payload % (8 * count) == 0)
            throw DatasetFormatError(DatasetErrorKind::DimensionMismatch,
                                     "'" + path + "': header declares " + std::to_string(row_values) +
                                         " values per sample but the payload holds " +
                                         std::to_string(payload / (8 * count) - 1));
        if (payload < expected)
            throw DatasetFormatError(DatasetErrorKind::TruncatedPayload,
                                     "'" + path + "': payload has " + std::to_string(payload) + " bytes, header implies " +
                                         std::to_string(expected));
        throw DatasetFormatError(DatasetErrorKind::DimensionMismatch,
                                 "'" + path + "': " + std::to_string(payload - expected) + " trailing bytes after payload");
    }

    std::size_t offset = kDatasetHeaderBytes + meta_len;
    ds.samples.resize(count);
    for (auto& s : ds.samples) {
        s.x.resize(static_cast<Eigen::Index>(ds.q0), static_cast<Eigen::Index>(ds.n));
        std::memcpy(s.x.data(), buf.data() + offset, 8 * row_values);
        offset += 8 * row_values;
    }
    for (std::size_t i = 0; i < count; ++i, offset += 8) {
        const auto label = get<std::uint64_t>(buf, offset);
        if (label >= ds.c)
            throw DatasetFormatError(DatasetErrorKind::InvalidLabel, "'" + path + "': sample " + std::to_string(i) +
                                                                         " has label " + std::to_string(label) +
                                                                         " outside [0, " + std::to_string(ds.c) + ")");
        ds.samples[i].label = label;
    }
    return ds;
}

}  // namespace mimo
