#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace mani {

/// Architecture hyperparameters for the four trainable parts.
struct ModelConfig {
    int in_channels = 3;
    int base_width = 16;  // backbone output channels D
    int depth = 4;        // encoder levels, >= 2
    int disc_hidden_width = 512;
    int disc_hidden_layers = 2;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// (conv3x3 -> BN -> ReLU) x 2
class DoubleConvImpl : public torch::nn::Module {
public:
    DoubleConvImpl(int in_channels, int out_channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(DoubleConv);

/// U-Net encoder-decoder with skip connections. Output has base_width
/// channels and the input's spatial size.
class BackboneImpl : public torch::nn::Module {
public:
    BackboneImpl(int in_channels, int base_width, int depth);

    /// x: [B, C, H, W]. H and W must be divisible by 2^(depth-1).
    torch::Tensor forward(const torch::Tensor& x);

    [[nodiscard]] int out_channels() const { return base_width_; }
    [[nodiscard]] int depth() const { return depth_; }
    /// Number of forward passes executed so far (instrumentation).
    [[nodiscard]] std::int64_t forward_calls() const { return forward_calls_; }

private:
    int base_width_;
    int depth_;
    std::int64_t forward_calls_ = 0;
    std::vector<DoubleConv> encoders_;
    std::vector<DoubleConv> decoders_;
};
TORCH_MODULE(Backbone);

/// 1x1 convolution D -> D, batch normalisation, ReLU.
class ProjectionHeadImpl : public torch::nn::Module {
public:
    explicit ProjectionHeadImpl(int channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
    torch::nn::BatchNorm2d norm{nullptr};
};
TORCH_MODULE(ProjectionHead);

/// Concat critic T(a, b): [a; b] -> (Linear + ReLU) x hidden_layers -> Linear -> scalar.
class DiscriminatorImpl : public torch::nn::Module {
public:
    DiscriminatorImpl(int feature_dim, int hidden_width, int hidden_layers);

    /// a, b: [N, D] (or [D]). Returns [N] scores (or a 0-d tensor).
    torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);

    /// Final linear layer, exposed so callers can zero it.
    torch::nn::Linear& output_layer() { return output_; }

private:
    int feature_dim_;
    torch::nn::Sequential hidden_{nullptr};
    torch::nn::Linear output_{nullptr};
};
TORCH_MODULE(Discriminator);

enum class Part { backbone, seg_head, proj_head, discriminator };
const char* to_string(Part p);

struct ForwardOutput {
    torch::Tensor logits;       // [B, 1, H, W]
    torch::Tensor projections;  // [B, D, H, W]
};

/// The four trainable parts. Move-only; clone() for an independent copy.
class ModelBundle {
public:
    explicit ModelBundle(const ModelConfig& config);

    ModelBundle(ModelBundle&&) = default;
    ModelBundle& operator=(ModelBundle&&) = default;
    ModelBundle(const ModelBundle&) = delete;
    ModelBundle& operator=(const ModelBundle&) = delete;

    [[nodiscard]] ModelBundle clone() const;

    /// One shared backbone pass feeding both heads.
    ForwardOutput forward_all(const torch::Tensor& images);
    /// Backbone + segmentation head only; the projection head is not run.
    torch::Tensor segment(const torch::Tensor& images);

    void train(bool on = true);
    void eval() { train(false); }
    void to(torch::Dtype dtype);

    [[nodiscard]] std::vector<torch::Tensor> parameters() const;
    [[nodiscard]] std::vector<torch::Tensor> parameters(Part part) const;
    [[nodiscard]] std::int64_t parameter_count(Part part) const;
    [[nodiscard]] int feature_dim() const { return config_.base_width; }
    [[nodiscard]] const ModelConfig& config() const { return config_; }

    Backbone backbone{nullptr};
    torch::nn::Conv2d seg_head{nullptr};
    ProjectionHead proj_head{nullptr};
    Discriminator discriminator{nullptr};

private:
    torch::nn::Module& part_module(Part part) const;
    ModelConfig config_;
};

/// Checkpoint archive contents.
struct Checkpoint {
    ModelBundle bundle;
    std::string config_text;  // key=value dump of the run configuration
};

/// Writes one torch serialization archive holding every part's parameters and
/// buffers (keyed by part name, then the module's own parameter path), the
/// architecture fields, and `config_text`.
void save_checkpoint(const ModelBundle& bundle, const std::string& config_text, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mani
