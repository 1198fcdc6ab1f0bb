use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::network::Network;
use super::tensor::{Shape3, Tensor4};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, Stream};

/// Widths of the five networks. Kernel 3, stride 2, padding 1 throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub latent_dim: usize,
    pub conv_channels: [usize; 3],
    pub hidden: usize,
    pub disc_hidden: usize,
    pub leaky_slope: f32,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            latent_dim: 32,
            conv_channels: [16, 32, 64],
            hidden: 128,
            disc_hidden: 64,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
    LatentDiscriminator,
    ImageDiscriminator,
    Classifier,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Encoder,
        Role::Decoder,
        Role::LatentDiscriminator,
        Role::ImageDiscriminator,
        Role::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
            Role::LatentDiscriminator => "latent_discriminator",
            Role::ImageDiscriminator => "image_discriminator",
            Role::Classifier => "classifier",
        }
    }
}

/// Encoder, decoder, both discriminators and the latent classifier.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub encoder: Network,
    pub decoder: Network,
    pub latent_discriminator: Network,
    pub image_discriminator: Network,
    pub classifier: Network,
    pub image_shape: Shape3,
    pub num_classes: usize,
    pub arch: ArchConfig,
}

const K: usize = 3;
const S: usize = 2;
const P: usize = 1;

fn conv(in_channels: usize, out_channels: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels,
        out_channels,
        kernel: K,
        stride: S,
        padding: P,
    }
}

/// Three stride-2 convolutions, returning the layers and the final feature shape.
fn conv_stack(
    image: Shape3,
    channels: [usize; 3],
    slope: f32,
) -> Result<(Vec<LayerSpec>, Vec<Shape3>)> {
    let mut layers = Vec::new();
    let mut shapes = vec![image];
    let mut cur = image;
    for &c in &channels {
        let layer = conv(cur.channels, c);
        cur = layer
            .output_shape(cur)
            .map_err(|m| Error::Config(format!("image {image} too small for the encoder: {m}")))?;
        layers.push(layer);
        layers.push(LayerSpec::LeakyRelu { slope });
        shapes.push(cur);
    }
    Ok((layers, shapes))
}

impl ModelBundle {
    /// Builds all five networks for `image_shape` and initializes them from
    /// the seed's init stream.
    pub fn new(
        image_shape: Shape3,
        num_classes: usize,
        arch: ArchConfig,
        seed: u64,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        if arch.latent_dim == 0 || arch.hidden == 0 || arch.disc_hidden == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        let slope = arch.leaky_slope;
        let lrelu = LayerSpec::LeakyRelu { slope };
        let d = arch.latent_dim;
        let (mut enc_layers, shapes) = conv_stack(image_shape, arch.conv_channels, slope)?;
        let feat = shapes[3];
        enc_layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Linear {
                inputs: feat.len(),
                outputs: arch.hidden,
            },
            lrelu.clone(),
            LayerSpec::Linear {
                inputs: arch.hidden,
                outputs: d,
            },
        ]);

        let mut dec_layers = vec![
            LayerSpec::Linear {
                inputs: d,
                outputs: arch.hidden,
            },
            lrelu.clone(),
            LayerSpec::Linear {
                inputs: arch.hidden,
                outputs: feat.len(),
            },
            lrelu.clone(),
            LayerSpec::Reshape { shape: feat },
        ];
        for i in (0..3).rev() {
            let (from, to) = (shapes[i + 1], shapes[i]);
            // Pick the output padding that restores the encoder's spatial size.
            let base = (from.height - 1) * S + K - 2 * P;
            let output_padding = to.height - base;
            if to.width != (from.width - 1) * S + K - 2 * P + output_padding {
                return Err(Error::Config(format!(
                    "cannot mirror non-square encoder stage {to}"
                )));
            }
            dec_layers.push(LayerSpec::ConvTranspose2d {
                in_channels: from.channels,
                out_channels: to.channels,
                kernel: K,
                stride: S,
                padding: P,
                output_padding,
            });
            dec_layers.push(if i == 0 {
                LayerSpec::Sigmoid
            } else {
                lrelu.clone()
            });
        }

        let h = arch.disc_hidden;
        let latent_disc = vec![
            LayerSpec::Linear {
                inputs: d,
                outputs: h,
            },
            lrelu.clone(),
            LayerSpec::Linear {
                inputs: h,
                outputs: h,
            },
            lrelu.clone(),
            LayerSpec::Linear {
                inputs: h,
                outputs: 1,
            },
        ];
        let (mut image_disc, _) = conv_stack(image_shape, arch.conv_channels, slope)?;
        image_disc.extend([
            LayerSpec::Flatten,
            LayerSpec::Linear {
                inputs: feat.len(),
                outputs: 1,
            },
        ]);
        let classifier = vec![
            LayerSpec::Linear {
                inputs: d,
                outputs: h,
            },
            lrelu,
            LayerSpec::Linear {
                inputs: h,
                outputs: num_classes,
            },
        ];

        let latent = Shape3::flat(d);
        let mut bundle = ModelBundle {
            encoder: Network::new(Role::Encoder.name(), image_shape, enc_layers)?,
            decoder: Network::new(Role::Decoder.name(), latent, dec_layers)?,
            latent_discriminator: Network::new(
                Role::LatentDiscriminator.name(),
                latent,
                latent_disc,
            )?,
            image_discriminator: Network::new(
                Role::ImageDiscriminator.name(),
                image_shape,
                image_disc,
            )?,
            classifier: Network::new(Role::Classifier.name(), latent, classifier)?,
            image_shape,
            num_classes,
            arch,
        };
        debug_assert_eq!(bundle.decoder.output_shape(), image_shape);
        for (i, role) in Role::ALL.into_iter().enumerate() {
            bundle
                .network_mut(role)
                .init(&mut rng::stream(seed, Stream::Init, i as u64));
        }
        Ok(bundle)
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn network(&self, role: Role) -> &Network {
        match role {
            Role::Encoder => &self.encoder,
            Role::Decoder => &self.decoder,
            Role::LatentDiscriminator => &self.latent_discriminator,
            Role::ImageDiscriminator => &self.image_discriminator,
            Role::Classifier => &self.classifier,
        }
    }

    pub fn network_mut(&mut self, role: Role) -> &mut Network {
        match role {
            Role::Encoder => &mut self.encoder,
            Role::Decoder => &mut self.decoder,
            Role::LatentDiscriminator => &mut self.latent_discriminator,
            Role::ImageDiscriminator => &mut self.image_discriminator,
            Role::Classifier => &mut self.classifier,
        }
    }

    /// Encoder output as a `latent_dim × batch` matrix.
    pub fn encode(&self, images: &Tensor4) -> Result<Matrix> {
        Ok(latents_to_matrix(&self.encoder.predict(images)?))
    }

    pub fn reconstruct(&self, images: &Tensor4) -> Result<Tensor4> {
        self.decoder.predict(&self.encoder.predict(images)?)
    }
}

/// `(batch, d×1×1)` tensor → `d × batch` matrix.
pub fn latents_to_matrix(t: &Tensor4) -> Matrix {
    let d = t.shape().len();
    Matrix::from_fn(d, t.batch(), |i, j| t.example(j)[i] as f64)
}

/// `d × batch` matrix → `(batch, d×1×1)` tensor.
pub fn matrix_to_latents(m: &Matrix) -> Tensor4 {
    let (d, n) = m.shape();
    let mut data = Vec::with_capacity(d * n);
    for j in 0..n {
        for i in 0..d {
            data.push(m[(i, j)] as f32);
        }
    }
    Tensor4::new(n, Shape3::flat(d), data).expect("sizes agree")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_shape_contract() {
        let model = ModelBundle::new(Shape3::new(1, 28, 28), 9, ArchConfig::default(), 1).unwrap();
        let x = Tensor4::zeros(2, Shape3::new(1, 28, 28));
        let z = model.encode(&x).unwrap();
        assert_eq!(z.shape(), (32, 2));
        assert_eq!(model.classifier.output_shape(), Shape3::flat(9));
        assert_eq!(model.latent_discriminator.output_shape(), Shape3::flat(1));
        assert_eq!(model.image_discriminator.output_shape(), Shape3::flat(1));
    }

    #[test]
    fn decoder_restores_image_shape() {
        for shape in [
            Shape3::new(1, 28, 28),
            Shape3::new(3, 32, 32),
            Shape3::new(1, 16, 16),
        ] {
            let model = ModelBundle::new(shape, 3, ArchConfig::default(), 0).unwrap();
            let x = Tensor4::zeros(3, shape);
            let y = model.reconstruct(&x).unwrap();
            assert_eq!((y.batch(), y.shape()), (3, shape));
            assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn encoder_and_decoder_have_five_parametric_layers() {
        let model = ModelBundle::new(Shape3::new(1, 16, 16), 2, ArchConfig::default(), 0).unwrap();
        for net in [&model.encoder, &model.decoder] {
            assert_eq!(
                net.layers().iter().filter(|l| l.param_count() > 0).count(),
                5
            );
        }
    }

    #[test]
    fn latent_matrix_round_trip() {
        let m = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(latents_to_matrix(&matrix_to_latents(&m)), m);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = ModelBundle::new(Shape3::new(1, 16, 16), 2, ArchConfig::default(), 9).unwrap();
        let b = ModelBundle::new(Shape3::new(1, 16, 16), 2, ArchConfig::default(), 9).unwrap();
        for role in Role::ALL {
            assert_eq!(a.network(role).params(), b.network(role).params());
        }
    }
}
