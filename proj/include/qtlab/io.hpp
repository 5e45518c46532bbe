/* Copyright 2026 The qtlab Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "qtlab/errors.hpp"
#include "qtlab/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are little-endian; big-endian hosts are unsupported");

namespace qtlab {

namespace fs = std::filesystem;

/// Write `base`.bin (raw little-endian payload) plus `base`.json (the
/// sidecar descriptor). dtype is "f64" or "f32".
inline void write_tensor(const fs::path &base, const Tensor &t, const std::string &dtype = "f64") {
    nlohmann::json desc;
    desc["shape"] = t.shape();
    desc["dtype"] = dtype;
    desc["layout"] = "row-major";

    fs::path bin = base;
    bin += ".bin";
    std::ofstream out(bin, std::ios::binary);
    if (!out)
        throw DataError("cannot write tensor payload " + bin.string());
    if (dtype == "f64") {
        out.write(reinterpret_cast<const char *>(t.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    } else if (dtype == "f32") {
        std::vector<float> buf(t.numel());
        for (std::size_t i = 0; i < t.numel(); ++i)
            buf[i] = static_cast<float>(t[i]);
        out.write(reinterpret_cast<const char *>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    } else {
        throw ConfigError("unsupported tensor dtype '" + dtype + "'");
    }
    out.close();

    fs::path meta = base;
    meta += ".json";
    std::ofstream jm(meta);
    if (!jm)
        throw DataError("cannot write tensor descriptor " + meta.string());
    jm << desc.dump(2) << '\n';
}

/// Read a tensor written by write_tensor. The payload byte count must equal
/// product(shape) * sizeof(dtype) exactly.
inline Tensor read_tensor(const fs::path &base) {
    fs::path meta = base;
    meta += ".json";
    std::ifstream jm(meta);
    if (!jm)
        throw DataError("cannot open tensor descriptor " + meta.string());
    nlohmann::json desc = nlohmann::json::parse(jm);
    const Shape shape = desc.at("shape").get<Shape>();
    const std::string dtype = desc.at("dtype").get<std::string>();
    const std::string layout = desc.value("layout", "row-major");
    if (layout != "row-major")
        throw ConfigError("unsupported tensor layout '" + layout + "'");
    std::size_t width = 0;
    if (dtype == "f64")
        width = sizeof(double);
    else if (dtype == "f32")
        width = sizeof(float);
    else
        throw ConfigError("unsupported tensor dtype '" + dtype + "'");

    fs::path bin = base;
    bin += ".bin";
    std::ifstream in(bin, std::ios::binary | std::ios::ate);
    if (!in)
        throw DataError("cannot open tensor payload " + bin.string());
    const std::size_t bytes = static_cast<std::size_t>(in.tellg());
    const std::size_t expected = shape_numel(shape) * width;
    if (bytes != expected)
        throw DataError("tensor payload " + bin.string() + " has " + std::to_string(bytes) +
                        " bytes, descriptor expects " + std::to_string(expected));
    in.seekg(0);
    std::vector<double> data(shape_numel(shape));
    if (dtype == "f64") {
        in.read(reinterpret_cast<char *>(data.data()), static_cast<std::streamsize>(bytes));
    } else {
        std::vector<float> buf(data.size());
        in.read(reinterpret_cast<char *>(buf.data()), static_cast<std::streamsize>(bytes));
        for (std::size_t i = 0; i < buf.size(); ++i)
            data[i] = static_cast<double>(buf[i]);
    }
    return Tensor(shape, std::move(data));
}

inline nlohmann::json read_json_file(const fs::path &path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    return nlohmann::json::parse(in);
}

inline void write_json_file(const fs::path &path, const nlohmann::json &j) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

/// Deterministic shortest-roundtrip float formatting for CSV cells.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // prefer the shortest representation that round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char probe[32];
        std::snprintf(probe, sizeof probe, "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(probe, "%lf", &back);
        if (back == v)
            return probe;
    }
    return buf;
}

/// Minimal CSV emitter; cells are pre-formatted strings.
class CsvWriter {
public:
    CsvWriter(const fs::path &path, const std::vector<std::string> &header) : out_(path) {
        if (!out_)
            throw DataError("cannot write " + path.string());
        write_row(header);
    }

    void write_row(const std::vector<std::string> &cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i)
                out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

} // namespace qtlab
