//! Dense tensors and a fixed-topology differentiable graph for 1D
//! convolutional networks.
//!
//! The engine covers exactly the layer set needed by the beat classifier,
//! the Siamese verification head and the R-peak detector: `same`-padded
//! 1D convolution, batch normalization, ReLU/sigmoid/softmax activations,
//! max pooling, spatial pyramid pooling, dense layers, dropout, channel
//! concatenation, element-wise addition and nearest-neighbour upsampling.
//!
//! A [`ModelGraph`] is immutable during a forward pass. [`ModelGraph::forward`]
//! returns a [`Pass`] holding every intermediate activation, and
//! [`ModelGraph::backward`] turns a pass plus output gradients into a
//! [`Gradients`] store with one slot per parameter and the input gradient.
//!
//! ```
//! use pulsegate_tensor::{GraphBuilder, Mode, Tensor};
//!
//! let mut b = GraphBuilder::<f64>::new(0);
//! let x = b.input("x", &[3]).unwrap();
//! let y = b.relu("relu", x).unwrap();
//! let graph = b.finish(&[y]).unwrap();
//! let input = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
//! let pass = graph.forward(&input, Mode::Infer).unwrap();
//! assert_eq!(pass.output().data(), &[0.0, 0.0, 2.0]);
//! ```

mod error;
mod graph;
mod io;
mod layer;
mod loss;
mod optim;
mod scalar;
mod tensor;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use error::{Result, TensorError};
pub use graph::{Gradients, GraphBuilder, Mode, ModelGraph, Node, NodeId, Pass, Source};
pub use io::{read_model, write_model, MODEL_MAGIC};
pub use layer::{LayerSpec, BN_EPSILON, BN_MOMENTUM};
pub use loss::{loss, LossKind, LossValue, CLIP_EPSILON};
pub use optim::{AdamConfig, AdamState};
pub use scalar::Scalar;
pub use tensor::Tensor;
