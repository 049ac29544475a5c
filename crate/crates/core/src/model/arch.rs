use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Aggregator, ConceptEncoder, Parametrizer, SennModel};
use crate::error::Result;
use crate::nn::{Activation, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    Identity,
    Autoencoder {
        concepts: usize,
        encoder_hidden: Vec<usize>,
        decoder_hidden: Vec<usize>,
        activation: Activation,
        /// Applied to the concept layer itself.
        #[serde(default = "identity")]
        concept_activation: Activation,
    },
}

fn identity() -> Activation {
    Activation::Identity
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Sum,
    PositiveAffine,
}

/// Layer widths and activations of a [`SennModel`]; enough to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub inputs: usize,
    pub classes: usize,
    pub encoder: EncoderSpec,
    pub parametrizer_hidden: Vec<usize>,
    pub parametrizer_activation: Activation,
    pub aggregator: AggregatorKind,
}

impl Architecture {
    pub fn concepts(&self) -> usize {
        match &self.encoder {
            EncoderSpec::Identity => self.inputs,
            EncoderSpec::Autoencoder { concepts, .. } => *concepts,
        }
    }

    pub(crate) fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SennModel> {
        let k = self.concepts();
        let widths = |first: usize, hidden: &[usize], last: usize| {
            std::iter::once(first).chain(hidden.iter().copied()).chain(std::iter::once(last)).collect::<Vec<_>>()
        };
        let encoder = match &self.encoder {
            EncoderSpec::Identity => ConceptEncoder::Identity { inputs: self.inputs },
            EncoderSpec::Autoencoder { encoder_hidden, decoder_hidden, activation, concept_activation, .. } => {
                let encoder = Mlp::new(&widths(self.inputs, encoder_hidden, k), *activation, *concept_activation, rng);
                let decoder = Mlp::new(&widths(k, decoder_hidden, self.inputs), *activation, Activation::Identity, rng);
                ConceptEncoder::Autoencoder { encoder, decoder }
            }
        };
        let net = Mlp::new(
            &widths(self.inputs, &self.parametrizer_hidden, k * self.classes),
            self.parametrizer_activation,
            Activation::Identity,
            rng,
        );
        let aggregator = match self.aggregator {
            AggregatorKind::Sum => Aggregator::Sum,
            AggregatorKind::PositiveAffine => Aggregator::positive_affine(vec![1.0; k])?,
        };
        SennModel::new(encoder, Parametrizer::new(net, k, self.classes)?, aggregator)
    }

    pub(crate) fn of(model: &SennModel) -> Self {
        let hidden = |mlp: &Mlp| {
            let w = mlp.widths();
            w[1..w.len() - 1].to_vec()
        };
        let hidden_activation = |mlp: &Mlp| {
            if mlp.layers().len() > 1 {
                mlp.layers()[0].activation()
            } else {
                Activation::Identity
            }
        };
        let encoder = match &model.encoder {
            ConceptEncoder::Identity { .. } => EncoderSpec::Identity,
            ConceptEncoder::Autoencoder { encoder, decoder } => EncoderSpec::Autoencoder {
                concepts: encoder.outputs(),
                encoder_hidden: hidden(encoder),
                decoder_hidden: hidden(decoder),
                activation: hidden_activation(encoder),
                concept_activation: encoder.layers()[encoder.layers().len() - 1].activation(),
            },
        };
        Architecture {
            inputs: model.inputs(),
            classes: model.classes(),
            encoder,
            parametrizer_hidden: hidden(&model.parametrizer.net),
            parametrizer_activation: hidden_activation(&model.parametrizer.net),
            aggregator: match model.aggregator {
                Aggregator::Sum => AggregatorKind::Sum,
                Aggregator::PositiveAffine { .. } => AggregatorKind::PositiveAffine,
            },
        }
    }

    /// Identity concepts with a tanh parametrizer of the given hidden widths.
    pub fn tabular(inputs: usize, classes: usize, hidden: &[usize]) -> Self {
        Architecture {
            inputs,
            classes,
            encoder: EncoderSpec::Identity,
            parametrizer_hidden: hidden.to_vec(),
            parametrizer_activation: Activation::Tanh,
            aggregator: AggregatorKind::Sum,
        }
    }
}
