#include "hali/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace hali::data {

namespace fs = std::filesystem;

uint64_t fnv1a(const void* bytes, size_t len, uint64_t seed) {
    const uint8_t* p = static_cast<const uint8_t*>(bytes);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {
uint32_t read_be32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}
void write_be32(std::ofstream& os, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
} // namespace

IdxFile read_idx_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open IDX file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < 4) throw DataError("truncated IDX header in " + path);

    IdxFile f;
    f.magic = read_be32(bytes.data());
    // magic = 0x0000 08 <ndims> for unsigned-byte data
    if ((f.magic >> 16) != 0 || ((f.magic >> 8) & 0xff) != 0x08)
        throw DataError("bad IDX magic " + std::to_string(f.magic) + " in " + path);
    int ndims = static_cast<int>(f.magic & 0xff);
    if (bytes.size() < 4 + 4 * static_cast<size_t>(ndims)) throw DataError("truncated IDX header in " + path);
    size_t count = 1;
    for (int i = 0; i < ndims; ++i) {
        uint32_t d = read_be32(bytes.data() + 4 + 4 * static_cast<size_t>(i));
        f.dims.push_back(static_cast<int>(d));
        count *= d;
    }
    size_t off = 4 + 4 * static_cast<size_t>(ndims);
    if (bytes.size() - off < count)
        throw DataError("truncated IDX payload in " + path + ": expected " + std::to_string(count) + " bytes, got " +
                        std::to_string(bytes.size() - off));
    f.payload.assign(bytes.begin() + static_cast<long>(off), bytes.begin() + static_cast<long>(off + count));
    return f;
}

Tensor load_idx_images(const std::string& path) {
    IdxFile f = read_idx_file(path);
    if (f.magic != 2051) throw DataError("bad IDX magic for images (want 2051, got " + std::to_string(f.magic) + ") in " + path);
    if (f.dims.size() != 3) throw DataError("image IDX must be rank 3 in " + path);
    int n = f.dims[0], h = f.dims[1], w = f.dims[2];
    Tensor t = Tensor::zeros({n, 1, h, w});
    auto d = t.data();
    for (size_t i = 0; i < f.payload.size(); ++i)
        d[i] = static_cast<float>(f.payload[i]) / 255.0f * 2.0f - 1.0f;
    return t;
}

std::vector<int> load_idx_labels(const std::string& path) {
    IdxFile f = read_idx_file(path);
    if (f.magic != 2049) throw DataError("bad IDX magic for labels (want 2049, got " + std::to_string(f.magic) + ") in " + path);
    if (f.dims.size() != 1) throw DataError("label IDX must be rank 1 in " + path);
    std::vector<int> labels(f.payload.begin(), f.payload.end());
    return labels;
}

LabeledImages load_idx(const std::string& images_path, const std::string& labels_path) {
    LabeledImages li;
    li.images = load_idx_images(images_path);
    li.labels = load_idx_labels(labels_path);
    if (static_cast<int>(li.labels.size()) != li.images.dim(0))
        throw DataError("image/label count mismatch: " + std::to_string(li.images.dim(0)) + " images vs " +
                        std::to_string(li.labels.size()) + " labels");
    return li;
}

void write_idx_images(const std::string& path, const Tensor& images) {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 1) throw ArgumentError("write_idx_images expects {N,1,H,W}");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write IDX file: " + path);
    write_be32(os, 2051);
    write_be32(os, static_cast<uint32_t>(s[0]));
    write_be32(os, static_cast<uint32_t>(s[2]));
    write_be32(os, static_cast<uint32_t>(s[3]));
    for (float v : images.data()) {
        float u = (v + 1.0f) * 0.5f * 255.0f;
        int b = static_cast<int>(std::lround(u));
        os.put(static_cast<char>(std::clamp(b, 0, 255)));
    }
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write IDX file: " + path);
    write_be32(os, 2049);
    write_be32(os, static_cast<uint32_t>(labels.size()));
    for (int l : labels) os.put(static_cast<char>(l));
}

namespace {
Tensor take_rows(const Tensor& images, int begin, int end) {
    const Shape& s = images.shape();
    size_t stride = static_cast<size_t>(images.numel() / s[0]);
    Tensor out = Tensor::zeros({end - begin, s[1], s[2], s[3]});
    std::memcpy(out.data().data(), images.data().data() + static_cast<size_t>(begin) * stride,
                static_cast<size_t>(end - begin) * stride * sizeof(float));
    return out;
}
} // namespace

Dataset load_dataset(const std::string& dir, int train_limit, int val_count) {
    auto p = [&](const char* f) { return (fs::path(dir) / f).string(); };
    LabeledImages train = load_idx(p("train-images-idx3-ubyte"), p("train-labels-idx1-ubyte"));
    LabeledImages test = load_idx(p("t10k-images-idx3-ubyte"), p("t10k-labels-idx1-ubyte"));

    int total = train.images.dim(0);
    if (train_limit > 0 && train_limit + val_count < total) total = train_limit + val_count;
    if (val_count >= total) throw DataError("validation split larger than available training data");
    int n_train = total - val_count;

    Dataset d;
    d.train_images = take_rows(train.images, 0, n_train);
    d.train_labels.assign(train.labels.begin(), train.labels.begin() + n_train);
    d.val_images = take_rows(train.images, n_train, total);
    d.val_labels.assign(train.labels.begin() + n_train, train.labels.begin() + total);
    d.test_images = test.images;
    d.test_labels = test.labels;
    d.source = dir;

    uint64_t h = fnv1a(train.images.data().data(), train.images.data().size() * sizeof(float));
    h = fnv1a(test.images.data().data(), test.images.data().size() * sizeof(float), h);
    h = fnv1a(train.labels.data(), train.labels.size() * sizeof(int), h);
    d.checksum = h;

    int max_label = 0;
    for (int l : d.train_labels) max_label = std::max(max_label, l);
    for (int l : d.test_labels) max_label = std::max(max_label, l);
    d.classes = max_label + 1;
    return d;
}

std::vector<int> semisup_split(const std::vector<int>& labels, int per_class, int classes, uint64_t seed) {
    if (per_class < 1) throw ArgumentError("semisup_split: per_class must be >= 1");
    std::vector<std::vector<int>> buckets(static_cast<size_t>(classes));
    for (size_t i = 0; i < labels.size(); ++i) {
        int l = labels[i];
        if (l < 0 || l >= classes) throw DataError("label " + std::to_string(l) + " outside [0," +
                                                   std::to_string(classes) + ")");
        buckets[static_cast<size_t>(l)].push_back(static_cast<int>(i));
    }
    SeededRng rng(seed, 0x5eededb01dULL);
    std::vector<int> picked;
    for (int c = 0; c < classes; ++c) {
        auto& b = buckets[static_cast<size_t>(c)];
        if (static_cast<int>(b.size()) < per_class)
            throw DataError("class " + std::to_string(c) + " has only " + std::to_string(b.size()) +
                            " examples, need " + std::to_string(per_class));
        // Fisher-Yates, then take the head
        for (size_t i = b.size(); i-- > 1;) {
            size_t j = rng.below(static_cast<uint32_t>(i + 1));
            std::swap(b[i], b[j]);
        }
        picked.insert(picked.end(), b.begin(), b.begin() + per_class);
    }
    return picked;
}

// ---------------------------------------------------------------------------
// synthetic glyph set
// ---------------------------------------------------------------------------

namespace {

// Seven-segment layout on a 28x28 canvas:
//   A top, B top-right, C bottom-right, D bottom, E bottom-left,
//   F top-left, G middle.
constexpr uint8_t kSegments[10] = {
    0b0111111, // 0: ABCDEF
    0b0000110, // 1: BC
    0b1011011, // 2: ABDEG
    0b1001111, // 3: ABCDG
    0b1100110, // 4: BCFG
    0b1101101, // 5: ACDFG
    0b1111101, // 6: ACDEFG
    0b0000111, // 7: ABC
    0b1111111, // 8
    0b1101111, // 9: ABCDFG
};

struct Canvas {
    float px[28][28] = {};
    void fill_rect(float x0, float y0, float x1, float y1) {
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x)
                if (x + 0.5f >= x0 && x + 0.5f <= x1 && y + 0.5f >= y0 && y + 0.5f <= y1) px[y][x] = 1.0f;
    }
    float sample(float x, float y) const {
        int x0 = static_cast<int>(std::floor(x));
        int y0 = static_cast<int>(std::floor(y));
        float fx = x - x0, fy = y - y0;
        auto at = [&](int yy, int xx) -> float {
            if (xx < 0 || xx > 27 || yy < 0 || yy > 27) return 0.0f;
            return px[yy][xx];
        };
        return at(y0, x0) * (1 - fx) * (1 - fy) + at(y0, x0 + 1) * fx * (1 - fy) +
               at(y0 + 1, x0) * (1 - fx) * fy + at(y0 + 1, x0 + 1) * fx * fy;
    }
};

Canvas glyph_canvas(int digit, float thick) {
    // segment box: x in [9,19], y in [6,22]
    const float L = 9, R = 19, T = 6, M = 14, B = 22;
    Canvas c;
    uint8_t seg = kSegments[digit];
    float t = thick;
    if (seg & 0b0000001) c.fill_rect(L, T - t / 2, R, T + t / 2);         // A
    if (seg & 0b0000010) c.fill_rect(R - t / 2, T, R + t / 2, M);         // B
    if (seg & 0b0000100) c.fill_rect(R - t / 2, M, R + t / 2, B);         // C
    if (seg & 0b0001000) c.fill_rect(L, B - t / 2, R, B + t / 2);         // D
    if (seg & 0b0010000) c.fill_rect(L - t / 2, M, L + t / 2, B);         // E
    if (seg & 0b0100000) c.fill_rect(L - t / 2, T, L + t / 2, M);         // F
    if (seg & 0b1000000) c.fill_rect(L, M - t / 2, R, M + t / 2);         // G
    return c;
}

void render_sample(uint8_t* out, int digit, SeededRng& rng) {
    float thick = 1.6f + 1.4f * rng.next_float();
    Canvas canvas = glyph_canvas(digit, thick);

    float angle = (rng.next_float() - 0.5f) * 0.45f;     // ~ +-13 degrees
    float scale = 0.85f + 0.3f * rng.next_float();
    float dx = (rng.next_float() - 0.5f) * 5.0f;
    float dy = (rng.next_float() - 0.5f) * 5.0f;
    float gain = 0.65f + 0.35f * rng.next_float();
    float ca = std::cos(angle), sa = std::sin(angle);

    for (int y = 0; y < 28; ++y) {
        for (int x = 0; x < 28; ++x) {
            // pull the source coordinate back through shift/rotate/scale
            float ux = (x - 13.5f - dx), uy = (y - 13.5f - dy);
            float sx = (ca * ux + sa * uy) / scale + 13.5f;
            float sy = (-sa * ux + ca * uy) / scale + 13.5f;
            float v = canvas.sample(sx, sy) * gain;
            v += 0.06f * rng.normal();
            v = std::clamp(v, 0.0f, 1.0f);
            out[y * 28 + x] = static_cast<uint8_t>(std::lround(v * 255.0f));
        }
    }
}

} // namespace

void write_synthetic_idx(const std::string& dir, int n_train, int n_test, uint64_t seed) {
    fs::create_directories(dir);
    auto emit = [&](const char* img_name, const char* lbl_name, int n, uint64_t stream) {
        SeededRng rng(seed, stream);
        std::ofstream img((fs::path(dir) / img_name).string(), std::ios::binary);
        std::ofstream lbl((fs::path(dir) / lbl_name).string(), std::ios::binary);
        if (!img || !lbl) throw IoError("cannot write synthetic dataset under " + dir);
        write_be32(img, 2051);
        write_be32(img, static_cast<uint32_t>(n));
        write_be32(img, 28);
        write_be32(img, 28);
        write_be32(lbl, 2049);
        write_be32(lbl, static_cast<uint32_t>(n));
        std::vector<uint8_t> buf(28 * 28);
        for (int i = 0; i < n; ++i) {
            int digit = static_cast<int>(rng.below(10));
            render_sample(buf.data(), digit, rng);
            img.write(reinterpret_cast<const char*>(buf.data()), static_cast<long>(buf.size()));
            lbl.put(static_cast<char>(digit));
        }
    };
    emit("train-images-idx3-ubyte", "train-labels-idx1-ubyte", n_train, 101);
    emit("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", n_test, 202);
}

Dataset load_or_synthesize(const std::string& dir, const std::string& fallback_dir, int train_limit,
                           int val_count) {
    auto have_files = [](const std::string& d) {
        return !d.empty() && fs::exists(fs::path(d) / "train-images-idx3-ubyte") &&
               fs::exists(fs::path(d) / "train-labels-idx1-ubyte") &&
               fs::exists(fs::path(d) / "t10k-images-idx3-ubyte") &&
               fs::exists(fs::path(d) / "t10k-labels-idx1-ubyte");
    };
    if (have_files(dir)) return load_dataset(dir, train_limit, val_count);
    if (!have_files(fallback_dir)) {
        int n_train = std::max(train_limit + val_count, 11000);
        write_synthetic_idx(fallback_dir, n_train, 2000, 424242);
    }
    return load_dataset(fallback_dir, train_limit, val_count);
}

} // namespace hali::data
