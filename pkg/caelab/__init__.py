# MIMO-OFDM convolutional autoencoder waveform laboratory
