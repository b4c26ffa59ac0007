#include "mani/model.hpp"

#include <sstream>

#include "mani/types.hpp"

namespace mani {

namespace nn = torch::nn;

void ModelConfig::validate() const {
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (base_width < 1) throw ConfigError("base_width must be >= 1");
    if (depth < 2) throw ConfigError("backbone depth must be >= 2");
    if (disc_hidden_width < 1) throw ConfigError("disc_hidden_width must be >= 1");
    if (disc_hidden_layers < 1) throw ConfigError("disc_hidden_layers must be >= 1");
}

DoubleConvImpl::DoubleConvImpl(int in_channels, int out_channels) {
    body_ = register_module(
        "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1).bias(false)),
                               nn::BatchNorm2d(out_channels), nn::ReLU(),
                               nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1).bias(false)),
                               nn::BatchNorm2d(out_channels), nn::ReLU()));
}

torch::Tensor DoubleConvImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

BackboneImpl::BackboneImpl(int in_channels, int base_width, int depth) : base_width_(base_width), depth_(depth) {
    if (depth < 2) throw ConfigError("backbone depth must be >= 2");
    if (base_width < 1) throw ConfigError("backbone base_width must be >= 1");
    int prev = in_channels;
    for (int level = 0; level < depth; ++level) {
        const int width = base_width << level;
        encoders_.push_back(register_module("enc" + std::to_string(level), DoubleConv(prev, width)));
        prev = width;
    }
    // decoders_[level] consumes upsampled level+1 features concatenated with the level skip.
    for (int level = 0; level + 1 < depth; ++level) {
        const int width = base_width << level;
        const int below = base_width << (level + 1);
        decoders_.push_back(register_module("dec" + std::to_string(level), DoubleConv(below + width, width)));
    }
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 4) {
        throw ShapeError("backbone expects a [B, C, H, W] tensor");
    }
    const std::int64_t multiple = std::int64_t{1} << (depth_ - 1);
    if (x.size(2) % multiple != 0 || x.size(3) % multiple != 0) {
        std::ostringstream msg;
        msg << "backbone input " << x.size(2) << "x" << x.size(3) << " is not divisible by 2^(depth-1) = " << multiple;
        throw ShapeError(msg.str());
    }
    ++forward_calls_;

    std::vector<torch::Tensor> skips;
    skips.reserve(static_cast<std::size_t>(depth_));
    torch::Tensor h = x;
    for (int level = 0; level < depth_; ++level) {
        if (level > 0) {
            h = torch::max_pool2d(h, 2);
        }
        h = encoders_[static_cast<std::size_t>(level)]->forward(h);
        skips.push_back(h);
    }
    for (int level = depth_ - 2; level >= 0; --level) {
        const auto& skip = skips[static_cast<std::size_t>(level)];
        auto up = torch::upsample_bilinear2d(h, {skip.size(2), skip.size(3)}, /*align_corners=*/false);
        h = decoders_[static_cast<std::size_t>(level)]->forward(torch::cat({up, skip}, 1));
    }
    return h;
}

ProjectionHeadImpl::ProjectionHeadImpl(int channels) {
    conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
    norm = register_module("norm", nn::BatchNorm2d(nn::BatchNormOptions(channels).momentum(0.1).eps(1e-5)));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& x) { return torch::relu(norm->forward(conv->forward(x))); }

DiscriminatorImpl::DiscriminatorImpl(int feature_dim, int hidden_width, int hidden_layers) : feature_dim_(feature_dim) {
    if (feature_dim < 1 || hidden_width < 1 || hidden_layers < 1) {
        throw ConfigError("discriminator sizes must be positive");
    }
    hidden_ = nn::Sequential();
    int in = 2 * feature_dim;
    for (int i = 0; i < hidden_layers; ++i) {
        hidden_->push_back(nn::Linear(in, hidden_width));
        hidden_->push_back(nn::ReLU());
        in = hidden_width;
    }
    hidden_ = register_module("hidden", hidden_);
    output_ = register_module("output", nn::Linear(in, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes() || a.size(-1) != feature_dim_) {
        throw ShapeError("discriminator inputs must both be [N, " + std::to_string(feature_dim_) + "]");
    }
    const bool single = a.dim() == 1;
    auto joined = torch::cat({single ? a.unsqueeze(0) : a, single ? b.unsqueeze(0) : b}, 1);
    auto score = output_->forward(hidden_->forward(joined)).squeeze(1);
    return single ? score.squeeze(0) : score;
}

const char* to_string(Part p) {
    switch (p) {
        case Part::backbone: return "backbone";
        case Part::seg_head: return "seg_head";
        case Part::proj_head: return "proj_head";
        case Part::discriminator: return "discriminator";
    }
    return "backbone";
}

ModelBundle::ModelBundle(const ModelConfig& config) : config_(config) {
    config_.validate();
    backbone = Backbone(config.in_channels, config.base_width, config.depth);
    seg_head = nn::Conv2d(nn::Conv2dOptions(config.base_width, 1, 1));
    proj_head = ProjectionHead(config.base_width);
    discriminator = Discriminator(config.base_width, config.disc_hidden_width, config.disc_hidden_layers);
}

torch::nn::Module& ModelBundle::part_module(Part part) const {
    switch (part) {
        case Part::backbone: return *backbone.ptr();
        case Part::seg_head: return *seg_head.ptr();
        case Part::proj_head: return *proj_head.ptr();
        case Part::discriminator: return *discriminator.ptr();
    }
    return *backbone.ptr();
}

namespace {

constexpr Part kParts[] = {Part::backbone, Part::seg_head, Part::proj_head, Part::discriminator};

void copy_state(const nn::Module& from, nn::Module& to) {
    torch::NoGradGuard guard;
    auto dst_params = to.named_parameters(true);
    for (const auto& item : from.named_parameters(true)) {
        dst_params[item.key()].copy_(item.value());
    }
    auto dst_buffers = to.named_buffers(true);
    for (const auto& item : from.named_buffers(true)) {
        dst_buffers[item.key()].copy_(item.value());
    }
}

}  // namespace

ModelBundle ModelBundle::clone() const {
    ModelBundle out(config_);
    const auto dtype = backbone->parameters().front().scalar_type();
    out.to(dtype);
    for (Part p : kParts) {
        copy_state(part_module(p), out.part_module(p));
    }
    out.train(backbone->is_training());
    return out;
}

ForwardOutput ModelBundle::forward_all(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != config_.in_channels) {
        throw ShapeError("forward_all expects [B, " + std::to_string(config_.in_channels) + ", H, W] images");
    }
    auto features = backbone->forward(images);
    return {seg_head->forward(features), proj_head->forward(features)};
}

torch::Tensor ModelBundle::segment(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != config_.in_channels) {
        throw ShapeError("segment expects [B, " + std::to_string(config_.in_channels) + ", H, W] images");
    }
    return seg_head->forward(backbone->forward(images));
}

void ModelBundle::train(bool on) {
    for (Part p : kParts) {
        part_module(p).train(on);
    }
}

void ModelBundle::to(torch::Dtype dtype) {
    // Integer buffers such as BatchNorm's num_batches_tracked keep their type.
    torch::NoGradGuard guard;
    for (Part p : kParts) {
        for (auto& t : part_module(p).parameters(true)) {
            if (t.is_floating_point()) t.set_data(t.to(dtype));
        }
        for (auto& t : part_module(p).buffers(true)) {
            if (t.is_floating_point()) t.set_data(t.to(dtype));
        }
    }
}

std::vector<torch::Tensor> ModelBundle::parameters() const {
    std::vector<torch::Tensor> all;
    for (Part p : kParts) {
        auto ps = part_module(p).parameters();
        all.insert(all.end(), ps.begin(), ps.end());
    }
    return all;
}

std::vector<torch::Tensor> ModelBundle::parameters(Part part) const { return part_module(part).parameters(); }

std::int64_t ModelBundle::parameter_count(Part part) const {
    std::int64_t n = 0;
    for (const auto& p : part_module(part).parameters()) {
        n += p.numel();
    }
    return n;
}

void save_checkpoint(const ModelBundle& bundle, const std::string& config_text, const std::filesystem::path& path) {
    torch::serialize::OutputArchive archive;
    for (Part p : kParts) {
        torch::serialize::OutputArchive sub;
        const auto& module = p == Part::backbone        ? static_cast<const nn::Module&>(*bundle.backbone)
                             : p == Part::seg_head      ? static_cast<const nn::Module&>(*bundle.seg_head)
                             : p == Part::proj_head     ? static_cast<const nn::Module&>(*bundle.proj_head)
                                                        : static_cast<const nn::Module&>(*bundle.discriminator);
        module.save(sub);
        archive.write(to_string(p), sub);
    }
    const auto& mc = bundle.config();
    archive.write("model.in_channels", c10::IValue(static_cast<std::int64_t>(mc.in_channels)));
    archive.write("model.base_width", c10::IValue(static_cast<std::int64_t>(mc.base_width)));
    archive.write("model.depth", c10::IValue(static_cast<std::int64_t>(mc.depth)));
    archive.write("model.disc_hidden_width", c10::IValue(static_cast<std::int64_t>(mc.disc_hidden_width)));
    archive.write("model.disc_hidden_layers", c10::IValue(static_cast<std::int64_t>(mc.disc_hidden_layers)));
    archive.write("config", c10::IValue(config_text));
    try {
        archive.save_to(path.string());
    } catch (const c10::Error& e) {
        throw DataError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw DataError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    auto read_int = [&](const char* key) {
        c10::IValue v;
        archive.read(key, v);
        return static_cast<int>(v.toInt());
    };
    ModelConfig mc;
    mc.in_channels = read_int("model.in_channels");
    mc.base_width = read_int("model.base_width");
    mc.depth = read_int("model.depth");
    mc.disc_hidden_width = read_int("model.disc_hidden_width");
    mc.disc_hidden_layers = read_int("model.disc_hidden_layers");
    c10::IValue text;
    archive.read("config", text);

    Checkpoint ckpt{ModelBundle(mc), text.toStringRef()};
    auto& b = ckpt.bundle;
    for (Part p : kParts) {
        torch::serialize::InputArchive sub;
        archive.read(to_string(p), sub);
        switch (p) {
            case Part::backbone: b.backbone->load(sub); break;
            case Part::seg_head: b.seg_head->load(sub); break;
            case Part::proj_head: b.proj_head->load(sub); break;
            case Part::discriminator: b.discriminator->load(sub); break;
        }
    }
    return ckpt;
}

}  // namespace mani
