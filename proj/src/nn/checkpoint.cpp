#include "m3/nn/checkpoint.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace m3::nn {

namespace {

void write_array(std::ostream& out, const char* tag, const std::vector<double>& v) {
    out << tag;
    char buf[40];
    for (double x : v) {
        std::snprintf(buf, sizeof buf, " %.17g", x);
        out << buf;
    }
    out << "\n";
}

std::vector<double> read_array(std::istream& in, const std::string& tag, std::size_t n) {
    std::string got;
    in >> got;
    if (got != tag) throw std::runtime_error("checkpoint: expected '" + tag + "', got '" + got + "'");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        if (!(in >> v[i])) throw std::runtime_error("checkpoint: truncated array " + tag);
    return v;
}

}  // namespace

void save_checkpoint(std::ostream& out, const std::map<std::string, const ParameterSet*>& sets) {
    out << "m3ckpt 1\n";
    for (const auto& [set_name, ps] : sets) {
        out << "set " << set_name << " " << ps->all().size() << "\n";
        for (const auto& [name, tb] : ps->all()) {
            out << "tensor " << name << " " << tb.shape.size();
            for (int d : tb.shape) out << " " << d;
            out << "\n";
            write_array(out, "values", tb.values);
            const AdamMoments& mom = ps->moments().at(name);
            write_array(out, "m1", mom.m1);
            write_array(out, "m2", mom.m2);
            out << "step " << mom.step << "\n";
        }
    }
}

void load_checkpoint(std::istream& in, const std::map<std::string, ParameterSet*>& sets) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "m3ckpt" || version != 1) throw std::runtime_error("checkpoint: bad header");
    std::string kw;
    while (in >> kw) {
        if (kw != "set") throw std::runtime_error("checkpoint: expected 'set', got '" + kw + "'");
        std::string set_name;
        std::size_t count = 0;
        in >> set_name >> count;
        auto it = sets.find(set_name);
        if (it == sets.end()) throw std::runtime_error("checkpoint: unknown parameter set " + set_name);
        ParameterSet& ps = *it->second;
        for (std::size_t k = 0; k < count; ++k) {
            std::string tag, name;
            std::size_t ndims = 0;
            in >> tag >> name >> ndims;
            if (tag != "tensor") throw std::runtime_error("checkpoint: expected 'tensor'");
            std::vector<int> shape(ndims);
            for (auto& d : shape) in >> d;
            TensorBuffer& tb = ps.has(name)
                                   ? ps.at(name)
                                   : ps.create(name, shape[0], ndims > 1 ? shape[1] : 1);
            if (tb.shape != shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
            tb.values = read_array(in, "values", tb.size());
            AdamMoments& mom = ps.moments()[name];
            mom.m1 = read_array(in, "m1", tb.size());
            mom.m2 = read_array(in, "m2", tb.size());
            in >> tag >> mom.step;
            if (tag != "step") throw std::runtime_error("checkpoint: expected 'step'");
        }
    }
}

void save_checkpoint_file(const std::string& path, const std::map<std::string, const ParameterSet*>& sets) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    save_checkpoint(out, sets);
}

void load_checkpoint_file(const std::string& path, const std::map<std::string, ParameterSet*>& sets) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    load_checkpoint(in, sets);
}

}  // namespace m3::nn
