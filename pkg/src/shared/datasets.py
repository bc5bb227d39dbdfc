"""
In-memory labelled image collections shared by training, distillation and attacks
"""
from dataclasses import dataclass, field

import torch

from .exceptions import DatasetEmpty, ShapeMismatch


@dataclass
class ImageDataset:
    """
    images: float tensor [N, C, H, W] with values in [0, 1]
    labels: long tensor [N]
    """
    images: torch.Tensor
    labels: torch.Tensor
    name: str = ''
    class_count: int = 10
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = torch.as_tensor(self.labels, dtype=torch.long)
        if self.images.dim() != 4:
            raise ShapeMismatch(f"Dataset images must be [N, C, H, W], got {tuple(self.images.shape)}")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeMismatch(
                f"{self.images.shape[0]} images but labels have shape {tuple(self.labels.shape)}"
            )
        if not self.ids:
            self.ids = list(range(self.images.shape[0]))

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def require_items(self):
        if len(self) == 0:
            raise DatasetEmpty(f"Dataset '{self.name or 'unnamed'}' has no samples")

    def subset(self, indices, name=None):
        index = torch.as_tensor(list(indices), dtype=torch.long)
        return ImageDataset(
            images=self.images[index],
            labels=self.labels[index],
            name=name or self.name,
            class_count=self.class_count,
            ids=[self.ids[i] for i in index.tolist()],
        )

    def batches(self, batch_size, order=None):
        """Yield (images, labels) chunks, optionally in a given index order"""
        order = torch.arange(len(self)) if order is None else order
        for start in range(0, len(self), batch_size):
            chunk = order[start:start + batch_size]
            yield self.images[chunk], self.labels[chunk]
