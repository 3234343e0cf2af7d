"""Deep boosting: layer-wise joint feature boosting and analysis dictionary learning."""
