#include "e2lora/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "e2lora/errors.hpp"

namespace e2lora {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'E', '2', 'L', 'O', 'R', 'A', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
// Guards against allocating absurd sizes from a corrupt header.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw ValidationError("checkpoint: unexpected end of input");
    return v;
}

void put_doubles(std::ostream& out, std::span<const double> v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_doubles(std::istream& in, std::span<double> v) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw ValidationError("checkpoint: unexpected end of input");
}

std::uint64_t get_count(std::istream& in) {
    const auto n = get<std::uint64_t>(in);
    if (n > kMaxElements) throw ValidationError("checkpoint: implausible size field");
    return n;
}

void put_vector(std::ostream& out, const Vector& v) {
    put<std::uint64_t>(out, v.size());
    put_doubles(out, v);
}

Vector get_vector(std::istream& in) {
    Vector v(get_count(in));
    get_doubles(in, v);
    return v;
}

void put_matrix(std::ostream& out, const Matrix& m) {
    put<std::uint64_t>(out, m.rows());
    put<std::uint64_t>(out, m.cols());
    put_doubles(out, m.data());
}

Matrix get_matrix(std::istream& in) {
    const auto rows = get_count(in);
    const auto cols = get_count(in);
    if (rows * cols > kMaxElements) throw ValidationError("checkpoint: implausible matrix size");
    Vector data(rows * cols);
    get_doubles(in, data);
    return Matrix(rows, cols, std::move(data));
}

void put_ints(std::ostream& out, const std::vector<int>& v) {
    put<std::uint64_t>(out, v.size());
    for (int x : v) put<std::int32_t>(out, x);
}

std::vector<int> get_ints(std::istream& in) {
    std::vector<int> v(get_count(in));
    for (int& x : v) x = get<std::int32_t>(in);
    return v;
}

void put_spectrum(std::ostream& out, const DriftSpectrum& s) {
    put<std::int32_t>(out, s.task_id);
    put<std::uint64_t>(out, s.proxy_count);
    put_matrix(out, s.u);
    put_vector(out, s.sigma);
}

DriftSpectrum get_spectrum(std::istream& in) {
    DriftSpectrum s;
    s.task_id = get<std::int32_t>(in);
    s.proxy_count = get<std::uint64_t>(in);
    s.u = get_matrix(in);
    s.sigma = get_vector(in);
    return s;
}

bool same_model(const ContinualModel& x, const ContinualModel& y) {
    if (x.active_task() != y.active_task() || x.trainable_head() != y.trainable_head()) return false;
    if (x.layers().size() != y.layers().size() || x.heads().size() != y.heads().size()) return false;
    for (std::size_t l = 0; l < x.layers().size(); ++l) {
        const AdaptedLayer& a = x.layers()[l];
        const AdaptedLayer& b = y.layers()[l];
        if (!(a.weight == b.weight && a.bias == b.bias && a.pairs == b.pairs && a.spectra == b.spectra)) return false;
        if (a.pool.d_out != b.pool.d_out || a.pool.entries.size() != b.pool.entries.size()) return false;
        for (std::size_t k = 0; k < a.pool.entries.size(); ++k) {
            const auto& e = a.pool.entries[k];
            const auto& f = b.pool.entries[k];
            if (e.task_id != f.task_id || e.retained_rank != f.retained_rank || e.sigma != f.sigma) return false;
        }
    }
    for (std::size_t h = 0; h < x.heads().size(); ++h) {
        const ClassifierHead& a = x.heads()[h];
        const ClassifierHead& b = y.heads()[h];
        if (!(a.weight == b.weight && a.bias == b.bias && a.class_ids == b.class_ids)) return false;
    }
    return true;
}

}  // namespace

bool operator==(const Checkpoint& x, const Checkpoint& y) {
    if (x.task != y.task || !same_model(x.model, y.model) || x.stats.size() != y.stats.size()) return false;
    for (std::size_t i = 0; i < x.stats.size(); ++i) {
        const ClassStats& a = x.stats[i];
        const ClassStats& b = y.stats[i];
        if (a.class_id != b.class_id || a.count != b.count || a.mu != b.mu || !(a.sigma_mat == b.sigma_mat)) return false;
    }
    return true;
}

void write_pair(std::ostream& out, const LoraPair& pair) {
    put<std::int32_t>(out, pair.task_id());
    put<std::uint8_t>(out, pair.b_frozen() ? 1 : 0);
    put<std::uint64_t>(out, pair.d_out());
    put<std::uint64_t>(out, pair.d_in());
    put<std::uint64_t>(out, pair.rank());
    put_doubles(out, pair.b().data());
    put_doubles(out, pair.a().data());
}

LoraPair read_pair(std::istream& in) {
    const int task = get<std::int32_t>(in);
    const bool frozen = get<std::uint8_t>(in) != 0;
    const auto d_out = get_count(in);
    const auto d_in = get_count(in);
    const auto rank = get_count(in);
    if (d_out * rank > kMaxElements || rank * d_in > kMaxElements) throw ValidationError("checkpoint: implausible pair");
    Vector b(d_out * rank);
    Vector a(rank * d_in);
    get_doubles(in, b);
    get_doubles(in, a);
    return LoraPair(task, Matrix(d_out, rank, std::move(b)), Matrix(rank, d_in, std::move(a)), frozen);
}

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::int32_t>(out, ck.task);

    const ContinualModel& m = ck.model;
    put<std::int32_t>(out, m.active_task());
    put<std::uint64_t>(out, m.trainable_head());
    put<std::uint64_t>(out, m.layers().size());
    for (const AdaptedLayer& layer : m.layers()) {
        put_matrix(out, layer.weight);
        put_vector(out, layer.bias);
        put<std::uint64_t>(out, layer.pairs.size());
        for (const LoraPair& p : layer.pairs) write_pair(out, p);
        put<std::uint64_t>(out, layer.spectra.size());
        for (const DriftSpectrum& s : layer.spectra) put_spectrum(out, s);
        put<std::uint64_t>(out, layer.pool.d_out);
        put<std::uint64_t>(out, layer.pool.entries.size());
        for (const auto& e : layer.pool.entries) {
            put<std::int32_t>(out, e.task_id);
            put<std::uint64_t>(out, e.retained_rank);
            put_vector(out, e.sigma);
        }
    }
    put<std::uint64_t>(out, m.heads().size());
    for (const ClassifierHead& h : m.heads()) {
        put_ints(out, h.class_ids);
        put_matrix(out, h.weight);
        put_vector(out, h.bias);
    }

    put<std::uint64_t>(out, ck.stats.size());
    for (const ClassStats& s : ck.stats) {
        put<std::int32_t>(out, s.class_id);
        put<std::uint64_t>(out, s.count);
        put_vector(out, s.mu);
        put_matrix(out, s.sigma_mat);
    }
    if (!out) throw Error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ValidationError("checkpoint: bad magic");
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion) throw ValidationError("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ck;
    ck.task = get<std::int32_t>(in);
    ContinualModel& m = ck.model;
    m.set_active_task(get<std::int32_t>(in));
    m.set_trainable_head(get<std::uint64_t>(in));
    const auto n_layers = get_count(in);
    for (std::uint64_t l = 0; l < n_layers; ++l) {
        AdaptedLayer layer;
        layer.weight = get_matrix(in);
        layer.bias = get_vector(in);
        const auto n_pairs = get_count(in);
        for (std::uint64_t k = 0; k < n_pairs; ++k) layer.pairs.push_back(read_pair(in));
        const auto n_spectra = get_count(in);
        for (std::uint64_t k = 0; k < n_spectra; ++k) layer.spectra.push_back(get_spectrum(in));
        layer.pool.d_out = get<std::uint64_t>(in);
        const auto n_entries = get_count(in);
        for (std::uint64_t k = 0; k < n_entries; ++k) {
            CapacityPool::Entry e;
            e.task_id = get<std::int32_t>(in);
            e.retained_rank = get<std::uint64_t>(in);
            e.sigma = get_vector(in);
            layer.pool.entries.push_back(std::move(e));
        }
        m.layers().push_back(std::move(layer));
    }
    const auto n_heads = get_count(in);
    for (std::uint64_t h = 0; h < n_heads; ++h) {
        ClassifierHead head;
        head.class_ids = get_ints(in);
        head.weight = get_matrix(in);
        head.bias = get_vector(in);
        m.heads().push_back(std::move(head));
    }
    const auto n_stats = get_count(in);
    for (std::uint64_t i = 0; i < n_stats; ++i) {
        ClassStats s;
        s.class_id = get<std::int32_t>(in);
        s.count = get<std::uint64_t>(in);
        s.mu = get_vector(in);
        s.sigma_mat = get_matrix(in);
        ck.stats.push_back(std::move(s));
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_checkpoint(out, ck);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

}  // namespace e2lora
